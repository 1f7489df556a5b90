//! Scenario configuration: the JSON surface of the CLI and the builders
//! turning a validated config into live lab objects.
//!
//! Every run is fully determined by the scenario file plus explicit seed
//! and horizon overrides; nothing samples outside the declared seeds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cocycle::{build_model, InvariantSpec, ModelSystem, Nrds, RandomNorm, WeightSpec};
use crate::dichotomy::{
    fit_certificate, identify_splitting, DichotomyCertificate, SplitOptions,
};
use crate::driver::{sample_orbits, Driver, OrbitPoint};
use crate::error::{LabError, Result};
use crate::growth::{make_rate, GrowthRate};
use crate::tol;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Cyclic { period: u64 },
    IrrationalRotation { angle: f64, bits: u32 },
    BernoulliWindow { seed: u64, window: u32 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Model {
        projection: Vec<Vec<f64>>,
        lambda: InvariantSpec,
        bigd: InvariantSpec,
        bigk: WeightSpec,
    },
    ConstantMatrix {
        matrix: Vec<Vec<f64>>,
    },
    RandomEntries {
        scale: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormSpec {
    Euclidean,
    /// `K(p) = base + amp * u(state)`.
    ScalarAffine { base: f64, amp: f64 },
    /// `W(p) = R(u) diag(1 + amp u, 1, ...) R(u)^T`.
    Spd { amp: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: usize,
    pub ell_max: i64,
    pub samples: usize,
    #[serde(default)]
    pub oracle_window: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            horizon: 64,
            ell_max: 16,
            samples: 8,
            oracle_window: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub sample: u64,
    #[serde(default = "default_probe_seed")]
    pub probes: u64,
    #[serde(default = "default_perturb_seed")]
    pub perturbation: u64,
}

fn default_probe_seed() -> u64 {
    0x9e3779b9
}
fn default_perturb_seed() -> u64 {
    0x7f4a7c15
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CertSpec {
    /// The closed-form certificate a model system carries.
    Model,
    /// Identify the splitting from orbit growth, then fit the envelope.
    Fit,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub horizon: Option<usize>,
    pub ratio_min: Option<f64>,
    pub growth_threshold: Option<f64>,
    pub gap_tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    #[serde(default = "default_r_max")]
    pub r_max: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 1.0, 1.5, 2.0, 3.0]
}
fn default_s_max() -> usize {
    64
}
fn default_r_max() -> usize {
    10_000
}

impl Default for LemmaSpec {
    fn default() -> Self {
        LemmaSpec {
            alphas: default_alphas(),
            s_max: default_s_max(),
            r_max: default_r_max(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustSpec {
    #[serde(default = "default_rho_margin")]
    pub rho_margin: f64,
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
}

fn default_rho_margin() -> f64 {
    0.5
}
fn default_probe_count() -> usize {
    16
}

impl Default for RobustSpec {
    fn default() -> Self {
        RobustSpec {
            rho_margin: default_rho_margin(),
            probe_count: default_probe_count(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MuNuSpec {
    pub adapted_horizon: Option<usize>,
    pub verify_horizon: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveSpec {
    #[serde(default = "default_target_ratio")]
    pub target_ratio: f64,
    #[serde(default = "default_witness_horizon")]
    pub witness_horizon: usize,
}

fn default_target_ratio() -> f64 {
    2.0
}
fn default_witness_horizon() -> usize {
    64
}

impl Default for DeriveSpec {
    fn default() -> Self {
        DeriveSpec {
            target_ratio: default_target_ratio(),
            witness_horizon: default_witness_horizon(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub driver: DriverSpec,
    pub mu: RateSpec,
    #[serde(default)]
    pub nu: Option<RateSpec>,
    pub system: SystemSpec,
    #[serde(default)]
    pub norm: Option<NormSpec>,
    #[serde(default)]
    pub certificate: Option<CertSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub tail_eps: Option<f64>,
    #[serde(default)]
    pub lemma: Option<LemmaSpec>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub robustness: Option<RobustSpec>,
    #[serde(default)]
    pub munu: Option<MuNuSpec>,
    #[serde(default)]
    pub derive: Option<DeriveSpec>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        serde_json::from_str(text)
            .map_err(|e| LabError::config("scenario", format!("invalid config: {e}")))
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.clone().unwrap_or_default()
    }

    pub fn tail_eps(&self) -> f64 {
        self.tail_eps.unwrap_or(tol::TAIL_EPS)
    }
}

fn parse_matrix(rows: &[Vec<f64>], dim: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(LabError::config(path, format!("expected a {dim}x{dim} matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(dim, dim, &flat))
}

/// Everything a subcommand needs, built and validated from a scenario.
pub struct Lab {
    pub scenario: Scenario,
    pub driver: Driver,
    pub mu: GrowthRate,
    pub nu: Option<GrowthRate>,
    pub sys: Nrds,
    pub norm: RandomNorm,
    pub model: Option<ModelSystem>,
    pub points: Vec<OrbitPoint>,
}

impl Lab {
    pub fn build(scenario: Scenario) -> Result<Lab> {
        if scenario.dim == 0 {
            return Err(LabError::config("dim", "dimension must be at least 1"));
        }
        let driver = match &scenario.driver {
            DriverSpec::Cyclic { period } => Driver::cyclic(*period)?,
            DriverSpec::IrrationalRotation { angle, bits } => {
                Driver::irrational_rotation(*angle, *bits)?
            }
            DriverSpec::BernoulliWindow { seed, window } => {
                Driver::bernoulli_window(*seed, *window)?
            }
        };
        let mu = make_rate(&scenario.mu.kind, &scenario.mu.params)?;
        let nu = scenario
            .nu
            .as_ref()
            .map(|spec| make_rate(&spec.kind, &spec.params))
            .transpose()?;

        let grid = scenario.grid();
        let mut points = Vec::new();
        for base in sample_orbits(&driver, grid.samples, scenario.seeds.sample) {
            for ell in 0..=grid.ell_max {
                points.push(OrbitPoint::new(driver, ell, base.state));
            }
        }

        let (sys, norm, model) = match &scenario.system {
            SystemSpec::Model {
                projection,
                lambda,
                bigd,
                bigk,
            } => {
                let p = parse_matrix(projection, scenario.dim, "system.projection")?;
                if matches!(bigk, WeightSpec::NuPower { .. }) && nu.is_none() {
                    return Err(LabError::config("nu", "NuPower weight requires a nu rate"));
                }
                let model = build_model(
                    &mu,
                    &driver,
                    p,
                    lambda.clone(),
                    bigd.clone(),
                    bigk.clone(),
                    nu.clone(),
                )?;
                (model.nrds.clone(), model.norm.clone(), Some(model))
            }
            SystemSpec::ConstantMatrix { matrix } => {
                let m = parse_matrix(matrix, scenario.dim, "system.matrix")?;
                let sys = Nrds::new(scenario.dim, driver, move |_| m.clone());
                let norm = build_norm(&scenario.norm, &driver)?;
                (sys, norm, None)
            }
            SystemSpec::RandomEntries { scale, seed } => {
                let s = *scale;
                let gen_seed = *seed;
                let dim = scenario.dim;
                let sys = Nrds::new(dim, driver, move |p| {
                    use rand::Rng;
                    use rand_chacha::rand_core::SeedableRng;
                    let h = crate::driver::splitmix64(
                        gen_seed ^ p.driver.state_digest(p.state)
                            ^ (p.ell as u64).wrapping_mul(0x9e3779b9),
                    );
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(h);
                    DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-s..s))
                });
                let norm = build_norm(&scenario.norm, &driver)?;
                (sys, norm, None)
            }
        };

        Ok(Lab {
            scenario,
            driver,
            mu,
            nu,
            sys,
            norm,
            model,
            points,
        })
    }

    pub fn split_options(&self) -> SplitOptions {
        let spec = self.scenario.split.clone().unwrap_or_default();
        let defaults = SplitOptions {
            horizon: self.scenario.grid().horizon,
            ..Default::default()
        };
        SplitOptions {
            horizon: spec.horizon.unwrap_or(defaults.horizon),
            ratio_min: spec.ratio_min.unwrap_or(defaults.ratio_min),
            growth_threshold: spec.growth_threshold.unwrap_or(defaults.growth_threshold),
            gap_tol: spec.gap_tol.unwrap_or(defaults.gap_tol),
        }
    }

    /// The certificate this scenario declares: the model's closed form, or
    /// an identified-and-fitted one.
    pub fn certificate(&self) -> Result<DichotomyCertificate> {
        let kind = self
            .scenario
            .certificate
            .clone()
            .unwrap_or(if self.model.is_some() {
                CertSpec::Model
            } else {
                CertSpec::Fit
            });
        match kind {
            CertSpec::Model => {
                let model = self.model.as_ref().ok_or_else(|| {
                    LabError::CertificateRequired(
                        "certificate kind `model` needs a model system".into(),
                    )
                })?;
                DichotomyCertificate::for_model(model)
            }
            CertSpec::Fit => {
                let split = identify_splitting(
                    &self.sys,
                    &self.norm,
                    &self.mu,
                    &self.points,
                    self.split_options(),
                )?;
                fit_certificate(
                    &self.sys,
                    &split.to_projections(),
                    &self.mu,
                    &self.norm,
                    &self.points,
                    self.scenario.grid().horizon,
                    self.scenario.seeds.probes,
                )
            }
        }
    }
}

fn build_norm(spec: &Option<NormSpec>, _driver: &Driver) -> Result<RandomNorm> {
    Ok(match spec.clone().unwrap_or(NormSpec::Euclidean) {
        NormSpec::Euclidean => RandomNorm::euclidean(),
        NormSpec::ScalarAffine { base, amp } => {
            if base + amp.min(0.0) < 1.0 {
                return Err(LabError::config("norm", "scalar weight must stay >= 1"));
            }
            RandomNorm::scalar(move |p| base + amp * p.driver.value(p.state))
        }
        NormSpec::Spd { amp } => {
            if amp < 0.0 {
                return Err(LabError::config("norm", "spd amplitude must be >= 0"));
            }
            RandomNorm::spd(move |p| {
                let u = p.driver.value(p.state);
                let d = p.driver; // dimension-agnostic rotation in the first plane
                let _ = d;
                spd_weight(u, amp, 2)
            })
        }
    })
}

/// Rotated diagonal SPD weight in the leading 2-plane; identity elsewhere.
pub fn spd_weight(u: f64, amp: f64, dim: usize) -> DMatrix<f64> {
    let mut w = DMatrix::identity(dim, dim);
    if dim >= 2 {
        let theta = std::f64::consts::PI * u;
        let (c, s) = (theta.cos(), theta.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let diag = DMatrix::from_row_slice(2, 2, &[1.0 + amp * u, 0.0, 0.0, 1.0]);
        let block = &rot * diag * rot.transpose();
        w.view_mut((0, 0), (2, 2)).copy_from(&block);
    }
    w
}

// ---------------------------------------------------------------------------
// signal JSON schema
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignalPointJson {
    pub ell: i64,
    pub state: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignalJson {
    pub points: Vec<SignalPointJson>,
    pub horizon: usize,
    /// `values[point][n]` is a vector of `dim` floats.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl SignalJson {
    pub fn into_grid(self, driver: &Driver, dim: usize) -> Result<crate::admissibility::SignalGrid> {
        let mut points = Vec::with_capacity(self.points.len());
        for sp in &self.points {
            if sp.ell < 0 {
                return Err(LabError::config("signal.points.ell", "ell must be >= 0"));
            }
            points.push(OrbitPoint::new(*driver, sp.ell, driver.decode(&sp.state)?));
        }
        let mut values = Vec::with_capacity(points.len());
        for (pi, per_point) in self.values.iter().enumerate() {
            if per_point.len() != self.horizon + 1 {
                return Err(LabError::config(
                    "signal.values",
                    format!("point {pi} must carry horizon+1 vectors"),
                ));
            }
            let mut row = Vec::with_capacity(per_point.len());
            for v in per_point {
                if v.len() != dim {
                    return Err(LabError::config(
                        "signal.values",
                        format!("vectors must have {dim} entries"),
                    ));
                }
                row.push(DVector::from_vec(v.clone()));
            }
            values.push(row);
        }
        crate::admissibility::SignalGrid::from_values(&points, self.horizon, values)
    }

    pub fn from_grid(grid: &crate::admissibility::SignalGrid) -> SignalJson {
        SignalJson {
            points: grid
                .points
                .iter()
                .map(|p| SignalPointJson {
                    ell: p.ell,
                    state: p.encode_state(),
                })
                .collect(),
            horizon: grid.horizon,
            values: grid
                .points
                .iter()
                .enumerate()
                .map(|(pi, _)| {
                    (0..=grid.horizon)
                        .map(|n| grid.get(pi, n).iter().copied().collect())
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionJson {
    #[serde(flatten)]
    pub signal: SignalJson,
    pub residuals: Vec<Vec<f64>>,
    pub truncation: Vec<Vec<f64>>,
    pub weighted_norm: f64,
    pub input_sup_norm: f64,
    pub apriori_bound_ok: bool,
}
