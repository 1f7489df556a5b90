//! Robustness of dichotomies under small one-step perturbations.
//!
//! A perturbation replaces the one-step maps by `Psi(1,p) = Phi(1,p) +
//! delta(p)` with the weighted smallness bound
//! `|delta(p) v|_{S p} <= (c / phi_{l+1}) |v|_p`. Below the admissible
//! threshold the perturbed admissibility equation is solved by iterating
//! the composition of the base solution operator with the update map, which
//! contracts at rate `rho |T|`; the perturbed cocycle keeps a growth bound
//! with exponent `lambda + eta/2`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::admissibility::{
    admissibility_constant, solve_admissibility, AdmissibleSolution, SignalGrid,
};
use crate::cocycle::{probe_vectors, Nrds, RandomNorm};
use crate::dichotomy::{
    bound_row, fit_certificate, identify_splitting, verify_dichotomy, BoundReport,
    DichotomyCertificate, SplitOptions,
};
use crate::driver::{splitmix64, OrbitPoint};
use crate::error::{LabError, Result};
use crate::growth::GrowthRate;
use crate::tol;

// ---------------------------------------------------------------------------
// thresholds
// ---------------------------------------------------------------------------

/// Empirical constant for the growth hypothesis: the largest observed
/// `|Phi(n,p)v| / (ratio^lam |v|)` over the grid, floored at 1.
pub fn estimate_growth_constant(
    sys: &Nrds,
    norm: &RandomNorm,
    rate: &GrowthRate,
    lam: &crate::dichotomy::ClassFn,
    points: &[OrbitPoint],
    horizon: usize,
) -> Result<f64> {
    let probes = probe_vectors(sys.dim(), 0x9b07);
    let mut m: f64 = 1.0;
    for p in points {
        let ell = p.ell as usize;
        let l = lam.eval(p)?;
        for n in 0..=horizon {
            let shifted = p.shift(n as i64)?;
            let phi = sys.evolve(n, p);
            let decay = rate.ratio_pow(ell, n, -l);
            for v in &probes {
                let denom = norm.eval(p, v);
                if denom > 0.0 {
                    m = m.max(norm.eval(&shifted, &(&phi * v)) * decay / denom);
                }
            }
        }
    }
    Ok(m)
}

/// Admissible perturbation size at one point:
/// `c = min(rho C, (1/(2M)) (1 - rho_margin))` with `rho = rho_margin / |T|`.
pub fn admissible_threshold(
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    m_growth: f64,
    t_norm: f64,
    rho_margin: f64,
    p: &OrbitPoint,
) -> Result<f64> {
    if !(t_norm > 0.0) || !(0.0 < rho_margin && rho_margin < 1.0) {
        return Err(LabError::Domain(
            "threshold needs |T| > 0 and 0 < rho_margin < 1".into(),
        ));
    }
    let rho = rho_margin / t_norm;
    let c = admissibility_constant(cert, rate, p)?;
    Ok((rho * c).min((1.0 - rho_margin) / (2.0 * m_growth)))
}

/// The scenario-wide threshold: the minimum over sampled points.
pub fn admissible_threshold_min(
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    m_growth: f64,
    t_norm: f64,
    rho_margin: f64,
    points: &[OrbitPoint],
) -> Result<f64> {
    let mut out = f64::INFINITY;
    for p in points {
        out = out.min(admissible_threshold(cert, rate, m_growth, t_norm, rho_margin, p)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// perturbations
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum PerturbShape {
    /// Per-point dense directions drawn from the seed.
    Random,
    /// A fixed direction matrix, rescaled per point.
    Directional(DMatrix<f64>),
}

/// `Psi = Phi + delta` with `|delta(p)|_{p -> S p} = magnitude / phi_{l+1}`
/// exactly at every point.
#[derive(Clone)]
pub struct Perturbation {
    pub base: Nrds,
    pub perturbed: Nrds,
    pub magnitude: f64,
    delta: Arc<dyn Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync>,
    cache: Arc<Mutex<HashMap<(crate::driver::State, i64), Arc<DMatrix<f64>>>>>,
}

impl Perturbation {
    pub fn delta(&self, p: &OrbitPoint) -> Arc<DMatrix<f64>> {
        let key = (p.state, p.ell);
        if let Some(d) = self.cache.lock().unwrap().get(&key) {
            return d.clone();
        }
        let d = Arc::new((self.delta)(p));
        self.cache.lock().unwrap().insert(key, d.clone());
        d
    }

    /// Smallness rows: the weighted operator norm of delta against
    /// `magnitude / phi_{l+1}`, which must agree to the scaling tolerance.
    pub fn verify_smallness(
        &self,
        norm: &RandomNorm,
        rate: &GrowthRate,
        points: &[OrbitPoint],
    ) -> Result<BoundReport> {
        let mut rows = Vec::new();
        for (id, p) in points.iter().enumerate() {
            let shifted = p.shift(1)?;
            let observed = norm.op_norm(p, &shifted, self.delta(p).as_ref());
            let target = self.magnitude / rate.phi(p.ell as usize + 1);
            let err = (observed - target).abs() / target.max(1e-300);
            let within = if self.magnitude == 0.0 {
                observed == 0.0
            } else {
                err <= tol::PERTURB_SCALE_TOL
            };
            rows.push(crate::dichotomy::BoundRow {
                point_id: id,
                ell: p.ell,
                n: 1,
                side: "smallness".into(),
                lhs: observed,
                rhs: target,
                margin: -err,
                pass: within,
            });
        }
        Ok(BoundReport::from_rows(rows))
    }
}

/// Builds a perturbation whose weighted one-step operator norm equals
/// `magnitude / phi_{l+1}` exactly (operator norms are absolutely
/// homogeneous, so the scaling equation is solved by division; the result
/// is re-verified to the scaling tolerance).
pub fn perturb(
    base: &Nrds,
    shape: &PerturbShape,
    magnitude: f64,
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    seed: u64,
) -> Result<Perturbation> {
    if magnitude < 0.0 {
        return Err(LabError::Domain("magnitude must be nonnegative".into()));
    }
    let dim = base.dim();
    let norm = cert.norm.clone();
    let rate = rate.clone();
    let shape = shape.clone();
    let direction = move |p: &OrbitPoint| -> DMatrix<f64> {
        match &shape {
            PerturbShape::Directional(e) => e.clone(),
            PerturbShape::Random => {
                let h = splitmix64(
                    seed ^ p.driver.state_digest(p.state) ^ (p.ell as u64).wrapping_mul(0x9e37),
                );
                let mut rng = ChaCha8Rng::seed_from_u64(h);
                DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0))
            }
        }
    };
    let delta = {
        let norm = norm.clone();
        let rate = rate.clone();
        Arc::new(move |p: &OrbitPoint| -> DMatrix<f64> {
            if magnitude == 0.0 {
                return DMatrix::zeros(dim, dim);
            }
            let e = direction(p);
            let shifted = p.shift(1).expect("forward shift");
            let opn = norm.op_norm(p, &shifted, &e);
            assert!(opn > 0.0, "perturbation direction must be nonzero");
            e * (magnitude / rate.phi(p.ell as usize + 1) / opn)
        }) as Arc<dyn Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync>
    };
    let perturbed = {
        let base = base.clone();
        let delta = delta.clone();
        Nrds::new(dim, *base.driver(), move |p| base.one_step(p) + delta(p))
    };
    Ok(Perturbation {
        base: base.clone(),
        perturbed,
        magnitude,
        delta,
        cache: Arc::new(Mutex::new(HashMap::new())),
    })
}

// ---------------------------------------------------------------------------
// the fixed-point solve
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RobustSolution {
    pub x: SignalGrid,
    pub iterations: usize,
    /// Geometric mean of successive difference ratios; 0 when the first
    /// correction already lands under tolerance.
    pub contraction_rate: f64,
    /// Largest perturbed-recurrence residual over the grid.
    pub max_residual: f64,
    pub weighted_norm: f64,
}

/// Applies the update map: `(G x)(p, 0) = 0` and
/// `(G x)(p, n) = phi_{l+n} delta(S^(n-1) p) x(p, n-1) + y(p, n)`.
fn apply_update(
    pert: &Perturbation,
    rate: &GrowthRate,
    y: &SignalGrid,
    x: &SignalGrid,
) -> Result<SignalGrid> {
    let dim = y.dim();
    let mut out = SignalGrid::zeros(&y.points, y.horizon, dim);
    for (pi, p) in y.points.iter().enumerate() {
        let ell = p.ell as usize;
        for n in 1..=y.horizon {
            let prev = p.shift((n - 1) as i64)?;
            let v = pert.delta(&prev).as_ref() * x.get(pi, n - 1) * rate.phi(ell + n)
                + y.get(pi, n);
            out.set(pi, n, v);
        }
    }
    Ok(out)
}

/// Solves the perturbed admissibility equation by iterating the composition
/// of the base solution operator with the update map from zero.
pub fn robust_solve(
    pert: &Perturbation,
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    y: &SignalGrid,
    fp_tol: f64,
    max_iter: usize,
) -> Result<RobustSolution> {
    if !y.starts_at_zero() {
        return Err(LabError::Domain("input signal must vanish at n = 0".into()));
    }
    let solve = |input: &SignalGrid| -> Result<AdmissibleSolution> {
        solve_admissibility(&pert.base, cert, rate, input, tol::TAIL_EPS)
    };
    let mut x_cur = solve(y)?.x;
    let mut diffs: Vec<f64> = Vec::new();
    let mut rising = 0usize;

    for k in 1..=max_iter {
        let gx = apply_update(pert, rate, y, &x_cur)?;
        let x_next = solve(&gx)?.x;
        let diff_grid = x_next.add_scaled(&x_cur, -1.0);
        let diff = diff_grid.weighted_norm(cert, rate)?;
        if let Some(&last) = diffs.last() {
            if diff > last {
                rising += 1;
                if rising >= 3 {
                    return Err(LabError::NotContracting(format!(
                        "differences rose for 3 consecutive iterations (last {diff:.3e})"
                    )));
                }
            } else {
                rising = 0;
            }
        }
        diffs.push(diff);
        x_cur = x_next;
        if diff <= fp_tol {
            let contraction_rate = if diffs.len() >= 2 {
                let ratios: Vec<f64> = diffs
                    .windows(2)
                    .filter(|w| w[0] > 0.0)
                    .map(|w| w[1] / w[0])
                    .collect();
                if ratios.is_empty() {
                    0.0
                } else {
                    (ratios.iter().map(|r| r.max(1e-300).ln()).sum::<f64>()
                        / ratios.len() as f64)
                        .exp()
                }
            } else {
                0.0
            };
            let max_residual = perturbed_residual(pert, cert, rate, y, &x_cur)?;
            let weighted_norm = x_cur.weighted_norm(cert, rate)?;
            return Ok(RobustSolution {
                x: x_cur,
                iterations: k,
                contraction_rate,
                max_residual,
                weighted_norm,
            });
        }
    }
    Err(LabError::MaxIterExceeded { max_iter })
}

fn perturbed_residual(
    pert: &Perturbation,
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    y: &SignalGrid,
    x: &SignalGrid,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (pi, p) in y.points.iter().enumerate() {
        let ell = p.ell as usize;
        for n in 0..y.horizon {
            let at = p.shift(n as i64)?;
            let next = p.shift((n + 1) as i64)?;
            let r = x.get(pi, n + 1)
                - pert.perturbed.one_step(&at) * x.get(pi, n)
                - y.get(pi, n + 1) / rate.phi(ell + n + 1);
            worst = worst.max(cert.norm.eval(&next, &r));
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// perturbed growth bound
// ---------------------------------------------------------------------------

/// Verifies the perturbed cocycle's growth bound
/// `|Psi(n,p)v|_{S^n p} <= M eta^(eta/2) ratio^(lambda + eta/2) |v|_p`,
/// which requires the perturbation size to stay below `1/(2M)`.
pub fn perturbed_growth_bound(
    pert: &Perturbation,
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    m_growth: f64,
    points: &[OrbitPoint],
    horizon: usize,
) -> Result<BoundReport> {
    if !(pert.magnitude < 1.0 / (2.0 * m_growth)) {
        return Err(LabError::Domain(format!(
            "growth bound needs magnitude {} below 1/(2M) = {}",
            pert.magnitude,
            1.0 / (2.0 * m_growth)
        )));
    }
    let eta = rate.eta();
    let dim = pert.perturbed.dim();
    let basis: Vec<DVector<f64>> = (0..dim)
        .map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    let mut rows = Vec::new();
    for (id, p) in points.iter().enumerate() {
        let lam = cert.lambda.eval(p)?;
        let ell = p.ell as usize;
        for n in 0..=horizon {
            let shifted = p.shift(n as i64)?;
            let psi = pert.perturbed.evolve(n, p);
            let grow =
                m_growth * eta.powf(eta / 2.0) * rate.ratio_pow(ell, n, lam + eta / 2.0);
            let (lhs, rhs) = crate::dichotomy::worst_over(basis.iter().map(|v| {
                (
                    cert.norm.eval(&shifted, &(&psi * v)),
                    grow * cert.norm.eval(p, v),
                )
            }));
            rows.push(bound_row(id, p.ell, n, "perturbed_growth", lhs, rhs));
        }
    }
    Ok(BoundReport::from_rows(rows))
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub magnitude: f64,
    pub threshold: f64,
    pub contraction_rate: f64,
    pub converged: bool,
    pub iterations: usize,
    pub refit_lambda: f64,
    pub refit_d: f64,
}

pub struct SweepSetup<'a> {
    pub sys: &'a Nrds,
    pub cert: &'a DichotomyCertificate,
    pub rate: &'a GrowthRate,
    pub points: &'a [OrbitPoint],
    pub horizon: usize,
    pub threshold: f64,
    pub shape: PerturbShape,
    pub seed: u64,
    pub fp_tol_factor: f64,
    pub max_iter: usize,
    pub split_opts: SplitOptions,
}

/// 16 magnitudes log-spaced over `[threshold/16, 4 threshold]`, each probed
/// with a seeded dense input; certificates are refitted on the perturbed
/// system where the splitting resolves.
pub fn run_sweep(setup: &SweepSetup<'_>, y: &SignalGrid) -> Result<Vec<SweepRow>> {
    let lo = (setup.threshold / 16.0).ln();
    let hi = (4.0 * setup.threshold).ln();
    let mut rows = Vec::new();
    for i in 0..16 {
        let t = i as f64 / 15.0;
        let magnitude = (lo + t * (hi - lo)).exp();
        let pert = perturb(
            setup.sys,
            &setup.shape,
            magnitude,
            setup.cert,
            setup.rate,
            setup.seed,
        )?;
        let fp_tol = setup.fp_tol_factor * y.sup_norm(&setup.cert.norm);
        let solved = robust_solve(&pert, setup.cert, setup.rate, y, fp_tol, setup.max_iter);
        let (converged, contraction_rate, iterations) = match &solved {
            Ok(s) => (true, s.contraction_rate, s.iterations),
            Err(_) => (false, f64::NAN, 0),
        };
        let (refit_lambda, refit_d) = match refit(setup, &pert) {
            Ok(pair) => pair,
            Err(e) => {
                if std::env::var("DICHOTOMY_LAB_DEBUG").is_ok() {
                    eprintln!("refit failed at magnitude {magnitude:.3e}: {e}");
                }
                (f64::NAN, f64::NAN)
            }
        };
        rows.push(SweepRow {
            magnitude,
            threshold: setup.threshold,
            contraction_rate,
            converged,
            iterations,
            refit_lambda,
            refit_d,
        });
    }
    Ok(rows)
}

/// Re-identifies the splitting of the perturbed system and fits a
/// certificate; returns the smallest fitted exponent and largest constant.
pub fn refit(setup: &SweepSetup<'_>, pert: &Perturbation) -> Result<(f64, f64)> {
    let split = identify_splitting(
        &pert.perturbed,
        &setup.cert.norm,
        setup.rate,
        setup.points,
        setup.split_opts,
    )?;
    let refit_horizon = setup.horizon.min(setup.split_opts.horizon);
    let refit_cert = fit_certificate(
        &pert.perturbed,
        &split.to_projections(),
        setup.rate,
        &setup.cert.norm,
        setup.points,
        refit_horizon,
        setup.seed ^ 0xF17,
    )?;
    let mut lam = f64::INFINITY;
    let mut d: f64 = 0.0;
    for p in setup.points {
        lam = lam.min(refit_cert.lambda.eval(p)?);
        d = d.max(refit_cert.big_d.eval(p)?);
    }
    let report = verify_dichotomy(
        &pert.perturbed,
        &refit_cert,
        setup.rate,
        setup.points,
        refit_horizon,
    )?;
    if !report.pass {
        return Err(LabError::NoContraction(
            "refitted certificate fails verification".into(),
        ));
    }
    Ok((lam, d))
}
