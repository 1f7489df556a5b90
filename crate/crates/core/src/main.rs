//! Command-line front end: scenario-driven subcommands with reproducible
//! CSV/JSON artifacts and run manifests.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dichotomy_lab::admissibility::{estimate_operator_norm, probe_signal, solve_admissibility};
use dichotomy_lab::dichotomy::{verify_dichotomy, ClassFn};
use dichotomy_lab::error::{LabError, Result};
use dichotomy_lab::growth::{find_minimal_growth, lemma_sum};
use dichotomy_lab::munorm::{
    build_adapted_norm, extract_munu, munu_certificate_from_model, verify_adapted_bounds,
    verify_munu,
};
use dichotomy_lab::report::{bound_report_csv, derived_csv, lemma_csv, sweep_csv, LemmaRow, Manifest};
use dichotomy_lab::robustness::{
    admissible_threshold_min, estimate_growth_constant, run_sweep, PerturbShape, SweepSetup,
};
use dichotomy_lab::scenario::{Lab, Scenario, SignalJson, SolutionJson};
use dichotomy_lab::{dichotomy, tol};

#[derive(Parser)]
#[command(
    name = "dichotomy-lab",
    version,
    about = "Numerical laboratory for generalized dichotomies of nonautonomous random dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output artifact path; a `<out>.manifest.json` is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the grid horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Direction {
    Forward,
    Backward,
    Roundtrip,
}

#[derive(Subcommand)]
enum Command {
    /// Two-sided summation estimates over the scenario's growth rate.
    LemmaCheck(CommonArgs),
    /// Stable/unstable/backward dichotomy bounds on the sampled grid.
    VerifyDichotomy(CommonArgs),
    /// Solve the admissibility equation for an input signal.
    SolveAdmissibility {
        #[command(flatten)]
        common: CommonArgs,
        /// Input signal (JSON schema: points, horizon, values).
        #[arg(long)]
        input: PathBuf,
    },
    /// Perturbation magnitudes against the admissible threshold.
    RobustnessSweep(CommonArgs),
    /// Adapted-norm equivalence between (mu,nu)- and mu-dichotomies.
    NormEquivalence {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "roundtrip")]
        direction: Direction,
    },
    /// Constants reconstructed from admissibility data.
    DeriveExponents(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(common: &CommonArgs) -> Result<(Lab, Vec<u8>)> {
    let bytes = std::fs::read(&common.config)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut scenario = Scenario::from_json(&text)?;
    if let Some(seed) = common.seed {
        scenario.seeds.sample = seed;
    }
    if let Some(h) = common.horizon {
        let mut grid = scenario.grid();
        grid.horizon = h;
        scenario.grid = Some(grid);
    }
    Ok((Lab::build(scenario)?, bytes))
}

fn manifest_for(common: &CommonArgs, sub: &str, config_bytes: &[u8], lab: &Lab) -> Manifest {
    let mut m = Manifest::new(sub, config_bytes)
        .with_option("seed.sample", lab.scenario.seeds.sample)
        .with_option("seed.probes", lab.scenario.seeds.probes)
        .with_option("seed.perturbation", lab.scenario.seeds.perturbation)
        .with_option("horizon", lab.scenario.grid().horizon);
    if let Some(seed) = common.seed {
        m = m.with_option("override.seed", seed);
    }
    if let Some(h) = common.horizon {
        m = m.with_option("override.horizon", h);
    }
    m
}

/// Artifact and manifest are written together after the run succeeds, so
/// failed runs leave no partial artifacts.
fn emit(out: &Path, artifact: &str, manifest: &Manifest) -> Result<()> {
    std::fs::write(out, artifact)?;
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".manifest.json");
    std::fs::write(PathBuf::from(manifest_path), manifest.to_json())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn out_path(common: &CommonArgs, default_name: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default_name))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::LemmaCheck(common) => {
            let (lab, bytes) = load(&common)?;
            let spec = lab.scenario.lemma.clone().unwrap_or_default();
            let mut rows = Vec::new();
            for &alpha in &spec.alphas {
                for s in 2..=spec.s_max {
                    let mut r = s;
                    loop {
                        rows.push(LemmaRow {
                            rate_kind: lab.mu.label(),
                            alpha,
                            s,
                            r,
                            out: lemma_sum(&lab.mu, alpha, s, r)?,
                        });
                        if r >= spec.r_max {
                            break;
                        }
                        r = (r * 2).min(spec.r_max);
                    }
                }
            }
            let csv = lemma_csv(&rows);
            let manifest = manifest_for(&common, "lemma-check", &bytes, &lab);
            emit(&out_path(&common, "lemma.csv"), &csv, &manifest)
        }

        Command::VerifyDichotomy(common) => {
            let (lab, bytes) = load(&common)?;
            let cert = lab.certificate()?;
            let horizon = lab.scenario.grid().horizon;
            let report = verify_dichotomy(&lab.sys, &cert, &lab.mu, &lab.points, horizon)?;
            let csv = bound_report_csv(&report, "side");
            let manifest = manifest_for(&common, "verify-dichotomy", &bytes, &lab)
                .with_option("pass", report.pass)
                .with_option("worst_margin", report.worst_margin);
            emit(&out_path(&common, "dichotomy.csv"), &csv, &manifest)
        }

        Command::SolveAdmissibility { common, input } => {
            let (lab, bytes) = load(&common)?;
            let cert = lab.certificate()?;
            let signal_bytes = std::fs::read(&input)?;
            let signal: SignalJson = serde_json::from_slice(&signal_bytes)
                .map_err(|e| LabError::config("signal", format!("invalid signal json: {e}")))?;
            let grid = signal.into_grid(&lab.driver, lab.sys.dim())?;
            let sol =
                solve_admissibility(&lab.sys, &cert, &lab.mu, &grid, lab.scenario.tail_eps())?;
            let out = SolutionJson {
                signal: SignalJson::from_grid(&sol.x),
                residuals: sol.residuals.clone(),
                truncation: sol.truncation.clone(),
                weighted_norm: sol.weighted_norm,
                input_sup_norm: sol.input_sup_norm,
                apriori_bound_ok: sol.apriori_bound_ok,
            };
            let json = serde_json::to_string_pretty(&out).expect("solution serializes");
            let manifest = manifest_for(&common, "solve-admissibility", &bytes, &lab)
                .with_input("signal", &signal_bytes);
            emit(&out_path(&common, "solution.json"), &json, &manifest)
        }

        Command::RobustnessSweep(common) => {
            let (lab, bytes) = load(&common)?;
            let cert = lab.certificate()?;
            let spec = lab.scenario.robustness.clone().unwrap_or_default();
            let grid = lab.scenario.grid();
            let t_est = estimate_operator_norm(
                &lab.sys,
                &cert,
                &lab.mu,
                &lab.points,
                grid.horizon,
                spec.probe_count,
                lab.scenario.seeds.probes,
            )?;
            let m_growth = estimate_growth_constant(
                &lab.sys,
                &cert.norm,
                &lab.mu,
                &cert.lambda,
                &lab.points,
                grid.horizon,
            )?;
            let threshold = admissible_threshold_min(
                &cert,
                &lab.mu,
                m_growth,
                t_est.estimate,
                spec.rho_margin,
                &lab.points,
            )?;
            let setup = SweepSetup {
                sys: &lab.sys,
                cert: &cert,
                rate: &lab.mu,
                points: &lab.points,
                horizon: grid.horizon,
                threshold,
                shape: PerturbShape::Random,
                seed: lab.scenario.seeds.perturbation,
                fp_tol_factor: tol::FP_TOL_FACTOR,
                max_iter: tol::MAX_ITER,
                split_opts: lab.split_options(),
            };
            let y = probe_signal(
                &lab.points,
                grid.horizon,
                lab.sys.dim(),
                &cert.norm,
                lab.scenario.seeds.probes,
                usize::MAX / 2,
            );
            let rows = run_sweep(&setup, &y)?;
            let csv = sweep_csv(&rows);
            let manifest = manifest_for(&common, "robustness-sweep", &bytes, &lab)
                .with_option("threshold", threshold)
                .with_option("t_norm_estimate", t_est.estimate)
                .with_option("m_growth", m_growth);
            emit(&out_path(&common, "sweep.csv"), &csv, &manifest)
        }

        Command::NormEquivalence { common, direction } => {
            let (lab, bytes) = load(&common)?;
            let model = lab
                .model
                .as_ref()
                .ok_or_else(|| LabError::config("system", "norm-equivalence needs a model system"))?;
            let nu = lab
                .nu
                .clone()
                .ok_or_else(|| LabError::config("nu", "norm-equivalence needs a nu rate"))?;
            let munu_spec = lab.scenario.munu.clone().unwrap_or_default();
            let start = munu_certificate_from_model(model, &nu)?;
            let grid = lab.scenario.grid();
            let verify_h = munu_spec.verify_horizon.unwrap_or_else(|| grid.horizon.min(32));
            let seed = lab.scenario.seeds.probes;

            let mut reports = Vec::new();
            let forward = matches!(direction, Direction::Forward | Direction::Roundtrip);
            let backward = matches!(direction, Direction::Backward | Direction::Roundtrip);

            if forward {
                reports.push(verify_munu(&lab.sys, &start, &lab.points, verify_h, seed)?);
            }
            let anorm = build_adapted_norm(
                &lab.sys,
                &start,
                munu_spec.adapted_horizon,
                &lab.points,
                seed,
            )?;
            if forward {
                reports.push(verify_adapted_bounds(
                    &lab.sys,
                    &start,
                    &anorm,
                    &lab.points,
                    verify_h.min(16),
                    seed,
                )?);
            }
            if backward {
                let p0 = lab.points[0];
                let k_bar = start.k_bar(&p0)?;
                let eps_bar = start.eps_bar(&p0)?;
                let b_val = start.strong.as_ref().expect("strong bounds").b.eval(&p0)?;
                let extracted = extract_munu(
                    &lab.sys,
                    &anorm.mu_certificate(),
                    &lab.mu,
                    &nu,
                    k_bar,
                    eps_bar,
                    3.0,
                    b_val,
                    &lab.points,
                    verify_h,
                    seed,
                )?;
                reports.push(verify_munu(&lab.sys, &extracted, &lab.points, verify_h, seed)?);
            }
            let merged = dichotomy::BoundReport::merged(reports);
            let csv = bound_report_csv(&merged, "check");
            let manifest = manifest_for(&common, "norm-equivalence", &bytes, &lab)
                .with_option(
                    "direction",
                    match direction {
                        Direction::Forward => "forward",
                        Direction::Backward => "backward",
                        Direction::Roundtrip => "roundtrip",
                    },
                )
                .with_option("pass", merged.pass);
            emit(&out_path(&common, "norm-equivalence.csv"), &csv, &manifest)
        }

        Command::DeriveExponents(common) => {
            let (lab, bytes) = load(&common)?;
            let cert = lab.certificate()?;
            let spec = lab.scenario.derive.clone().unwrap_or_default();
            let grid = lab.scenario.grid();
            let witness = find_minimal_growth(&lab.mu, spec.target_ratio, spec.witness_horizon)?;
            let split = dichotomy::identify_splitting(
                &lab.sys,
                &cert.norm,
                &lab.mu,
                &lab.points,
                lab.split_options(),
            )?;
            let t_est = estimate_operator_norm(
                &lab.sys,
                &cert,
                &lab.mu,
                &lab.points,
                grid.horizon,
                lab.scenario
                    .robustness
                    .clone()
                    .unwrap_or_default()
                    .probe_count,
                lab.scenario.seeds.probes,
            )?;
            let mut lam: f64 = 0.0;
            let mut c_const = f64::INFINITY;
            for p in &lab.points {
                lam = lam.max(cert.lambda.eval(p)?);
                c_const = c_const.min(dichotomy_lab::admissibility::admissibility_constant(
                    &cert, &lab.mu, p,
                )?);
            }
            let m_growth = estimate_growth_constant(
                &lab.sys,
                &cert.norm,
                &lab.mu,
                &ClassFn::Const(lam),
                &lab.points,
                grid.horizon,
            )?;
            let derived = dichotomy::derive_exponents(
                &lab.sys,
                &split,
                &lab.mu,
                &witness,
                &cert.norm,
                m_growth,
                lam,
                c_const,
                t_est.estimate,
                &lab.points,
                grid.horizon.min(32),
            )?;
            let csv = derived_csv(&derived);
            let manifest = manifest_for(&common, "derive-exponents", &bytes, &lab)
                .with_option("target_ratio", spec.target_ratio)
                .with_option("t_norm_estimate", t_est.estimate);
            emit(&out_path(&common, "derived.csv"), &csv, &manifest)
        }
    }
}
