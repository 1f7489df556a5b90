//! Dichotomy certificates: verification, fitting, splitting identification,
//! and the constants derived from admissibility data.
//!
//! A certificate packages a projection family with shift-invariant maps
//! `lambda` (rate) and `D` (constant) and the random norm the bounds are
//! measured in. Three bound families are checked on sampled grids:
//!
//! * stable:   `|Phi(n,p) P_p v|_{S^n p} <= D (mu_{l+n}/mu_l)^-lambda |v|_p`
//! * unstable: `|Phi(-n, l+n, th^n w) Q_{S^n p} v|_p <= D (mu_{l+n}/mu_l)^-lambda |v|_{S^n p}`
//! * backward: the same unstable bound reparameterized at `(l-n, th^-n w)`,
//!   checked for `n <= l`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cocycle::{
    evolve_unstable_inverse, op_norm2, orthonormalize, principal_angle_sin, probe_vectors,
    stable_step, InvariantSpec, ModelSystem, Nrds, ProjectionFamily, RandomNorm,
};
use crate::driver::{OrbitPoint, State};
use crate::error::{LabError, Result};
use crate::growth::{GrowthRate, MinimalGrowthWitness};
use crate::tol;

// ---------------------------------------------------------------------------
// orbit-class functions
// ---------------------------------------------------------------------------

/// A shift-forward invariant quantity: a function of the orbit class only.
#[derive(Clone)]
pub enum ClassFn {
    Const(f64),
    /// Spec evaluated on the orbit-class value, optionally rescaled.
    Spec { spec: InvariantSpec, scale: f64 },
    /// Fitted table keyed by the orbit-class key.
    Table(Arc<BTreeMap<String, f64>>),
}

impl ClassFn {
    pub fn eval(&self, p: &OrbitPoint) -> Result<f64> {
        match self {
            ClassFn::Const(v) => Ok(*v),
            ClassFn::Spec { spec, scale } => Ok(spec.eval(p) * scale),
            ClassFn::Table(t) => {
                let key = p.class_key();
                t.get(&key).copied().ok_or(LabError::MissingClass { key })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct DichotomyCertificate {
    pub projections: ProjectionFamily,
    pub lambda: ClassFn,
    pub big_d: ClassFn,
    pub norm: RandomNorm,
}

impl DichotomyCertificate {
    /// The certificate the model system carries by construction: constant
    /// projections and `D_cert = D * max(|P|, |Q|, 1)`.
    pub fn for_model(model: &ModelSystem) -> Result<Self> {
        let (pn, qn) = model.projection_norms();
        let scale = pn.max(qn).max(1.0);
        Ok(DichotomyCertificate {
            projections: ProjectionFamily::constant(model.projection.clone())?,
            lambda: ClassFn::Spec {
                spec: model.lambda.clone(),
                scale: 1.0,
            },
            big_d: ClassFn::Spec {
                spec: model.big_d.clone(),
                scale,
            },
            norm: model.norm.clone(),
        })
    }

    pub fn unstable_inverse(&self, sys: &Nrds, n: usize, p: &OrbitPoint) -> Result<DMatrix<f64>> {
        evolve_unstable_inverse(sys, &self.projections, n, p)
    }

    /// Checks the structural invariants on sampled points: idempotency,
    /// equivariance along the cocycle, and invertibility on kernels.
    pub fn validate(&self, sys: &Nrds, points: &[OrbitPoint], horizon: usize) -> Result<()> {
        for p in points {
            let here = self.projections.at(p)?;
            let res = self.projections.idempotency_residual(p)?;
            if res > tol::PROJECTION_RESIDUAL {
                return Err(LabError::InvalidProjection { residual: res });
            }
            for n in [1usize, horizon.max(1)] {
                let shifted = p.shift(n as i64)?;
                let there = self.projections.at(&shifted)?;
                let phi = sys.evolve(n, p);
                let lhs = &there.p * &phi;
                let rhs = &phi * &here.p;
                let denom = lhs.norm().max(rhs.norm()).max(1e-300);
                if (&lhs - &rhs).norm() / denom > tol::EQUIVARIANCE_RESIDUAL {
                    return Err(LabError::config(
                        "certificate.projections",
                        format!(
                            "equivariance residual {:.3e} at n={n}",
                            (&lhs - &rhs).norm() / denom
                        ),
                    ));
                }
                evolve_unstable_inverse(sys, &self.projections, n, p)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// bound reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub point_id: usize,
    pub ell: i64,
    pub n: usize,
    pub side: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Relative margin `(rhs - lhs) / max(|lhs|, |rhs|)`; nonnegative up to
    /// the crate slack means the bound holds.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub worst_margin: f64,
    pub pass: bool,
}

impl BoundReport {
    pub fn from_rows(rows: Vec<BoundRow>) -> Self {
        let worst_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        let pass = rows.iter().all(|r| r.pass);
        BoundReport {
            rows,
            worst_margin: if worst_margin.is_finite() {
                worst_margin
            } else {
                0.0
            },
            pass,
        }
    }

    pub fn merged(reports: impl IntoIterator<Item = BoundReport>) -> BoundReport {
        let rows = reports.into_iter().flat_map(|r| r.rows).collect();
        BoundReport::from_rows(rows)
    }
}

pub(crate) fn bound_row(
    point_id: usize,
    ell: i64,
    n: usize,
    side: &str,
    lhs: f64,
    rhs: f64,
) -> BoundRow {
    let margin = tol::rel_margin(lhs, rhs);
    BoundRow {
        point_id,
        ell,
        n,
        side: side.to_string(),
        lhs,
        rhs,
        margin,
        pass: margin >= -tol::REL_SLACK,
    }
}

/// Worst-vector reduction: the (lhs, rhs) pair with the smallest margin
/// across the probe vectors of one grid cell.
pub(crate) fn worst_over(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut worst = (0.0, 0.0);
    let mut worst_margin = f64::INFINITY;
    for (lhs, rhs) in pairs {
        let m = tol::rel_margin(lhs, rhs);
        if m < worst_margin {
            worst_margin = m;
            worst = (lhs, rhs);
        }
    }
    worst
}

/// Verifies the stable, unstable and backward dichotomy bounds on the grid
/// `points x {0..=horizon} x basis vectors`, recording the worst vector per
/// cell.
pub fn verify_dichotomy(
    sys: &Nrds,
    cert: &DichotomyCertificate,
    rate: &GrowthRate,
    points: &[OrbitPoint],
    horizon: usize,
) -> Result<BoundReport> {
    let dim = sys.dim();
    let basis: Vec<DVector<f64>> = (0..dim)
        .map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    let mut rows = Vec::new();

    for (id, p) in points.iter().enumerate() {
        let lam = cert.lambda.eval(p)?;
        let d = cert.big_d.eval(p)?;
        let ell = p.ell as usize;
        let here = cert.projections.at(p)?;

        // Stable orbits of every basis vector, pushed with re-projection.
        let mut stable_norms: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon + 1); basis.len()];
        for (vi, v) in basis.iter().enumerate() {
            let mut w = &here.p * v;
            for n in 0..=horizon {
                let at = p.shift(n as i64)?;
                stable_norms[vi].push(cert.norm.eval(&at, &w));
                if n < horizon {
                    w = stable_step(sys, &cert.projections, &at, &w)?;
                }
            }
        }

        for n in 0..=horizon {
            let shifted = p.shift(n as i64)?;
            let inv = cert.unstable_inverse(sys, n, p)?;
            let decay = rate.ratio_pow(ell, n, -lam);

            let (lhs, rhs) = worst_over(basis.iter().enumerate().map(|(vi, v)| {
                (stable_norms[vi][n], d * decay * cert.norm.eval(p, v))
            }));
            rows.push(bound_row(id, p.ell, n, "stable", lhs, rhs));

            let (lhs, rhs) = worst_over(basis.iter().map(|v| {
                (
                    cert.norm.eval(p, &(&inv * v)),
                    d * decay * cert.norm.eval(&shifted, v),
                )
            }));
            rows.push(bound_row(id, p.ell, n, "unstable", lhs, rhs));

            // Backward form at (l-n, th^-n w), for n <= l.
            if n <= ell {
                let back = p.shift(-(n as i64))?;
                let inv_b = cert.unstable_inverse(sys, n, &back)?;
                let decay_b = rate.ratio_pow(ell - n, n, -lam);
                let (lhs, rhs) = worst_over(basis.iter().map(|v| {
                    (
                        cert.norm.eval(&back, &(&inv_b * v)),
                        d * decay_b * cert.norm.eval(p, v),
                    )
                }));
                rows.push(bound_row(id, p.ell, n, "backward", lhs, rhs));
            }
        }
    }
    Ok(BoundReport::from_rows(rows))
}

// ---------------------------------------------------------------------------
// certificate fitting
// ---------------------------------------------------------------------------

struct FitCell {
    class: String,
    n: usize,
    /// lhs / denom, so the envelope at exponent lambda is gain * ratio^lambda.
    gain: f64,
    ln_ratio: f64,
}

/// Envelope of one class at a candidate exponent; `None` when the per-n sup
/// is still rising at the end of the window (unbounded envelope).
fn envelope(cells: &[&FitCell], lambda: f64, horizon: usize) -> Option<f64> {
    let mut per_n = vec![0.0f64; horizon + 1];
    for c in cells {
        let e = c.gain * (lambda * c.ln_ratio).exp();
        if !e.is_finite() {
            return None;
        }
        per_n[c.n] = per_n[c.n].max(e);
    }
    let head = per_n[..=horizon / 2].iter().cloned().fold(0.0f64, f64::max);
    let tail = per_n[horizon];
    if tail > head * (1.0 + 1e-9) {
        return None;
    }
    Some(per_n.iter().cloned().fold(1.0f64, f64::max))
}

fn geometric_grid(lo_exp: f64, hi_exp: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            2f64.powf(lo_exp + t * (hi_exp - lo_exp))
        })
        .collect()
}

/// Fits the largest exponent `lambda` (per orbit class) admitting a finite
/// constant `D` on the sampled grid, by geometric grid search refined once
/// around the best point. The fitted certificate passes `verify_dichotomy`
/// on the same data by construction.
pub fn fit_certificate(
    sys: &Nrds,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    norm: &RandomNorm,
    points: &[OrbitPoint],
    horizon: usize,
    seed: u64,
) -> Result<DichotomyCertificate> {
    let dim = sys.dim();
    let probes = probe_vectors(dim, seed);
    let mut cells: Vec<FitCell> = Vec::new();

    for p in points {
        let ell = p.ell as usize;
        let class = p.class_key();
        let here = proj.at(p)?;
        for v in &probes {
            let denom_s = norm.eval(p, v);
            let mut w = &here.p * v;
            for n in 0..=horizon {
                let at = p.shift(n as i64)?;
                if denom_s > 0.0 {
                    cells.push(FitCell {
                        class: class.clone(),
                        n,
                        gain: norm.eval(&at, &w) / denom_s,
                        ln_ratio: rate.ln_value(ell + n) - rate.ln_value(ell),
                    });
                }
                if n < horizon {
                    w = stable_step(sys, proj, &at, &w)?;
                }
            }
        }
        for n in 0..=horizon {
            let shifted = p.shift(n as i64)?;
            let inv = evolve_unstable_inverse(sys, proj, n, p)?;
            let ln_ratio = rate.ln_value(ell + n) - rate.ln_value(ell);
            for v in &probes {
                let denom_u = norm.eval(&shifted, v);
                if denom_u > 0.0 {
                    cells.push(FitCell {
                        class: class.clone(),
                        n,
                        gain: norm.eval(p, &(&inv * v)) / denom_u,
                        ln_ratio,
                    });
                }
            }
        }
    }

    let mut classes: BTreeMap<String, Vec<&FitCell>> = BTreeMap::new();
    for c in &cells {
        classes.entry(c.class.clone()).or_default().push(c);
    }

    let coarse = geometric_grid(tol::FIT_GRID_LO_EXP, tol::FIT_GRID_HI_EXP, tol::FIT_GRID_POINTS);
    let step = (tol::FIT_GRID_HI_EXP - tol::FIT_GRID_LO_EXP) / (tol::FIT_GRID_POINTS - 1) as f64;
    let mut lambda_table = BTreeMap::new();
    let mut d_table = BTreeMap::new();

    for (class, cls_cells) in &classes {
        let mut best: Option<(f64, f64)> = None;
        for &lam in &coarse {
            if let Some(d) = envelope(cls_cells, lam, horizon) {
                if best.map(|(b, _)| lam > b).unwrap_or(true) {
                    best = Some((lam, d));
                }
            }
        }
        let (lam0, d0) = best.ok_or_else(|| {
            LabError::NoContraction(format!(
                "no exponent on the grid admits a bounded envelope for class {class}"
            ))
        })?;
        // One refinement pass between the neighbors of the best coarse point.
        let center = lam0.log2();
        let fine = geometric_grid(center - step, center + step, tol::FIT_GRID_POINTS);
        let mut refined = (lam0, d0);
        for &lam in &fine {
            if lam > refined.0 {
                if let Some(d) = envelope(cls_cells, lam, horizon) {
                    refined = (lam, d);
                }
            }
        }
        lambda_table.insert(class.clone(), refined.0);
        d_table.insert(class.clone(), refined.1.max(1.0));
    }

    Ok(DichotomyCertificate {
        projections: proj.clone(),
        lambda: ClassFn::Table(Arc::new(lambda_table)),
        big_d: ClassFn::Table(Arc::new(d_table)),
        norm: norm.clone(),
    })
}

// ---------------------------------------------------------------------------
// splitting identification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SplitOptions {
    pub horizon: usize,
    pub growth_threshold: f64,
    pub gap_tol: f64,
    pub ratio_min: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            horizon: 64,
            growth_threshold: tol::GROWTH_THRESHOLD,
            gap_tol: tol::GAP_TOL,
            ratio_min: tol::SPLIT_RATIO_MIN,
        }
    }
}

pub struct SplitData {
    /// Orthonormal basis of the bounded-orbit subspace.
    pub v: DMatrix<f64>,
    /// Orthonormal basis of the pushed-forward complement.
    pub z: DMatrix<f64>,
    /// Mu-normalized growth exponents of the singular directions.
    pub exponents: Vec<f64>,
}

/// The invariant splitting X = V + Z identified from orbit growth.
///
/// V at any point is spanned by the singular directions of `Phi(horizon, p)`
/// whose mu-normalized exponent (least-squares slope of log orbit norm
/// against log mu-ratio) stays below `-growth_threshold`. Z is the
/// orthogonal complement of V at base points (`ell = 0`), pushed forward
/// along the cocycle elsewhere.
#[derive(Clone)]
pub struct Splitting {
    sys: Nrds,
    norm: RandomNorm,
    rate: GrowthRate,
    pub opts: SplitOptions,
    cache: Arc<Mutex<HashMap<(State, i64), Arc<SplitData>>>>,
}

impl Splitting {
    fn exponent(&self, p: &OrbitPoint, v: &DVector<f64>) -> f64 {
        let ell = p.ell as usize;
        let denom = self.norm.eval(p, v);
        let v2 = v.norm();
        let mut xs = Vec::with_capacity(self.opts.horizon + 1);
        let mut ys = Vec::with_capacity(self.opts.horizon + 1);
        for n in 0..=self.opts.horizon {
            let shifted = p.shift(n as i64).expect("forward shift");
            let phi = self.sys.evolve(n, p);
            let w = &phi * v;
            // Orbit norms below the product's round-off floor carry no
            // signal: the window ends where cancellation takes over.
            if w.norm() <= phi.norm() * v2 * 1e-13 {
                break;
            }
            let nrm = self.norm.eval(&shifted, &w);
            if nrm > 0.0 && denom > 0.0 {
                xs.push(self.rate.ln_value(ell + n) - self.rate.ln_value(ell));
                ys.push((nrm / denom).ln());
            }
        }
        if xs.len() < 2 {
            return f64::NEG_INFINITY;
        }
        let n = xs.len() as f64;
        let xm = xs.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            num += (x - xm) * (y - ym);
            den += (x - xm) * (x - xm);
        }
        num / den
    }

    fn stable_directions(&self, p: &OrbitPoint) -> Result<SplitData> {
        let ell = p.ell as usize;
        let ratio = self.rate.ratio(ell, self.opts.horizon);
        if ratio < self.opts.ratio_min {
            return Err(LabError::Domain(format!(
                "splitting horizon too short: mu-ratio {ratio:.3e} below {}",
                self.opts.ratio_min
            )));
        }
        let phi = self.sys.evolve(self.opts.horizon, p);
        let v_right = crate::linalg::right_singular_vectors(&phi);
        let dim = self.sys.dim();
        let mut stable_cols: Vec<DVector<f64>> = Vec::new();
        let mut unstable_cols: Vec<DVector<f64>> = Vec::new();
        let mut exponents = Vec::with_capacity(dim);
        for i in 0..dim {
            let dir: DVector<f64> = v_right.column(i).into_owned();
            let e = self.exponent(p, &dir);
            if e.is_finite() && e.abs() <= self.opts.gap_tol {
                return Err(LabError::AmbiguousGap(format!(
                    "direction exponent {e:.4} within +/-{} of zero",
                    self.opts.gap_tol
                )));
            }
            if e <= -self.opts.growth_threshold {
                stable_cols.push(dir);
            } else {
                unstable_cols.push(dir);
            }
            exponents.push(e);
        }
        let v = if stable_cols.is_empty() {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&stable_cols)
        };
        let z = if unstable_cols.is_empty() {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&unstable_cols)
        };
        Ok(SplitData { v, z, exponents })
    }

    pub fn at(&self, p: &OrbitPoint) -> Result<Arc<SplitData>> {
        let key = (p.state, p.ell);
        if let Some(d) = self.cache.lock().unwrap().get(&key) {
            return Ok(d.clone());
        }
        let data = if p.ell == 0 {
            Arc::new(self.stable_directions(p)?)
        } else {
            let base = p.base_point();
            let base_data = self.at(&base)?;
            let own = self.stable_directions(p)?;
            // Pushforward of the base complement along the cocycle.
            let pushed = self.sys.evolve(p.ell as usize, &base) * &base_data.z;
            let z = orthonormalize(&pushed);
            if own.v.ncols() + z.ncols() != self.sys.dim() {
                return Err(LabError::AmbiguousGap(format!(
                    "dim V = {} and dim Z = {} do not fill the space",
                    own.v.ncols(),
                    z.ncols()
                )));
            }
            Arc::new(SplitData {
                v: own.v,
                z,
                exponents: own.exponents,
            })
        };
        self.cache.lock().unwrap().insert(key, data.clone());
        Ok(data)
    }

    /// Projection family onto V along Z.
    pub fn to_projections(&self) -> ProjectionFamily {
        let me = self.clone();
        ProjectionFamily::try_from_fn(move |p| {
            let data = me.at(p)?;
            let dim = data.v.nrows();
            let k = data.v.ncols();
            let mut b = DMatrix::zeros(dim, dim);
            b.columns_mut(0, k).copy_from(&data.v);
            b.columns_mut(k, dim - k).copy_from(&data.z);
            let binv = b.clone().try_inverse().ok_or_else(|| {
                LabError::SingularRestriction("V + Z does not span the space".into())
            })?;
            let mut sel = DMatrix::zeros(dim, dim);
            for i in 0..k {
                sel[(i, i)] = 1.0;
            }
            Ok(&b * sel * binv)
        })
    }

    /// Invariance check: `Phi(1,p) V_p` inside `V_{S p}` and
    /// `Phi(1,p) Z_p = Z_{S p}` up to the splitting residual.
    pub fn verify(&self, points: &[OrbitPoint]) -> Result<BoundReport> {
        let mut rows = Vec::new();
        for (id, p) in points.iter().enumerate() {
            let here = self.at(p)?;
            let next = self.at(&p.shift(1)?)?;
            let phi = self.sys.evolve(1, p);

            let v_img = &phi * &here.v;
            let v_res = if v_img.ncols() > 0 {
                let proj = &next.v * (next.v.transpose() * &v_img);
                (&v_img - proj).norm() / v_img.norm().max(1e-300)
            } else {
                0.0
            };
            rows.push(bound_row(id, p.ell, 1, "v_invariance", v_res, tol::SPLITTING_RESIDUAL));

            let z_img = &phi * &here.z;
            let z_res = if z_img.ncols() > 0 {
                let zo = orthonormalize(&z_img);
                principal_angle_sin(&zo, &next.z)
            } else {
                0.0
            };
            rows.push(bound_row(id, p.ell, 1, "z_equivariance", z_res, tol::SPLITTING_RESIDUAL));
        }
        Ok(BoundReport::from_rows(rows))
    }
}

/// Identifies the stable/unstable splitting from orbit growth at the given
/// points (and their base points).
pub fn identify_splitting(
    sys: &Nrds,
    norm: &RandomNorm,
    rate: &GrowthRate,
    points: &[OrbitPoint],
    opts: SplitOptions,
) -> Result<Splitting> {
    let split = Splitting {
        sys: sys.clone(),
        norm: norm.clone(),
        rate: rate.clone(),
        opts,
        cache: Arc::new(Mutex::new(HashMap::new())),
    };
    for p in points {
        split.at(p)?;
    }
    Ok(split)
}

// ---------------------------------------------------------------------------
// derived exponents (converse direction)
// ---------------------------------------------------------------------------

/// Constants reconstructed from admissibility data.
#[derive(Clone, Debug, Serialize)]
pub struct DerivedExponents {
    /// Uniform bound on stable orbits.
    pub m2: f64,
    /// Threshold ratio forcing a 1/e contraction block; `ln_n0` stays
    /// finite when `n0` itself overflows.
    pub n0: f64,
    pub ln_n0: f64,
    /// Smallest positive integer with L1^K0 >= N0.
    pub k0: u32,
    /// Derived stable/unstable exponents; equal by construction.
    pub a: f64,
    pub b: f64,
    /// Derived constants; the final certificate uses their maximum.
    pub d1: f64,
    pub d2: f64,
    /// Block count making the separation quantity positive.
    pub m_star: u32,
    /// Orbit-class lower bound for the separation of unit vectors of V and Z.
    pub c_lower: f64,
    /// Pointwise exact separation and the induced projection bound 2/zeta.
    pub zeta: Vec<(usize, f64)>,
    pub projection_bound: Vec<(usize, f64)>,
    /// Margins of the derived certificate on the sampled grid.
    pub validation: BoundReport,
}

/// `K0 = smallest positive integer with L1^K0 >= N0`, computed from `ln N0`.
pub fn k0_from_ln(ln_n0: f64, l1: f64) -> u32 {
    if ln_n0 <= l1.ln() {
        return 1;
    }
    let mut k = (ln_n0 / l1.ln()).ceil().max(1.0) as u32;
    while k > 1 && (k as f64 - 1.0) * l1.ln() >= ln_n0 {
        k -= 1;
    }
    k
}

/// `a = 1 / (K0 log L2)`.
pub fn exponent_from(k0: u32, l2: f64) -> f64 {
    1.0 / (k0 as f64 * l2.ln())
}

/// Smallest positive integer m with `(1/d) L1^(a m) - d L2^(-a m) > 0`.
fn separation_block_count(d: f64, a: f64, l1: f64, l2: f64) -> u32 {
    let positive =
        |m: u32| (1.0 / d) * (a * m as f64 * l1.ln()).exp() - d * (-(a * m as f64) * l2.ln()).exp();
    let mut m = (2.0 * d.ln() / (a * (l1 * l2).ln())).floor().max(1.0) as u32;
    while positive(m) <= 0.0 {
        m += 1;
    }
    while m > 1 && positive(m - 1) > 0.0 {
        m -= 1;
    }
    m
}

/// Exact separation `inf |u+z|_p` over unit `u in V_p`, `z in Z_p` for
/// uniformly-weighted norms: `sqrt(2 - 2 sigma_max(V^T Z))`. Probe minimum
/// (an upper estimate of the infimum) otherwise.
fn zeta_at(norm: &RandomNorm, p: &OrbitPoint, data: &SplitData, seed: u64) -> f64 {
    if data.v.ncols() == 0 || data.z.ncols() == 0 {
        return 2.0;
    }
    let (c1, c2) = norm.equivalence(p, data.v.nrows());
    if (c2 - c1).abs() <= 1e-12 * c2 {
        let cross = op_norm2(&(data.v.transpose() * &data.z)).min(1.0);
        return (2.0 - 2.0 * cross).max(0.0).sqrt();
    }
    let mut best = f64::INFINITY;
    for (i, u) in probe_vectors(data.v.ncols(), seed).iter().enumerate() {
        for z in probe_vectors(data.z.ncols(), seed ^ (i as u64 + 1)) {
            let uu = &data.v * u;
            let zz = &data.z * &z;
            let un = norm.eval(p, &uu);
            let zn = norm.eval(p, &zz);
            if un > 0.0 && zn > 0.0 {
                best = best.min(norm.eval(p, &(uu / un + zz / zn)));
            }
        }
    }
    best
}

/// Reconstructs dichotomy constants from the minimal-growth witness, the
/// bounded-growth pair `(m_growth, lam)`, the weighted-space constant
/// `c_const` and the empirical solution-operator norm `t_norm`:
///
/// * `M2 = max(M L2^lam eta^lam, (1/C) lam M L2^lam L1^lam (L1^lam - 1)^-1 |T|)`
/// * stable threshold `N0 = eta exp(e |T| M2 / C)`; the unstable side uses
///   `L = C eta^-lam (1 - L1^-lam) / (M lam |T|)` and
///   `N0 = eta exp(e |T| / (C L))`; the larger one drives `K0`
/// * `a = b = 1/(K0 log L2)`, `D1 = e M2`, `D2 = e / L`
///
/// The derived `(max(D1, D2), a)` certificate is validated on the sampled
/// grid; margins are recorded, not asserted tight.
#[allow(clippy::too_many_arguments)]
pub fn derive_exponents(
    sys: &Nrds,
    splitting: &Splitting,
    rate: &GrowthRate,
    witness: &MinimalGrowthWitness,
    norm: &RandomNorm,
    m_growth: f64,
    lam: f64,
    c_const: f64,
    t_norm: f64,
    points: &[OrbitPoint],
    horizon: usize,
) -> Result<DerivedExponents> {
    if !(c_const > 0.0) || !(t_norm > 0.0) || !(lam > 0.0) || !(m_growth >= 1.0) {
        return Err(LabError::Domain(
            "derive_exponents needs C > 0, |T| > 0, lam > 0, M >= 1".into(),
        ));
    }
    // Bounded-growth hypothesis on the sampled data.
    let probes = probe_vectors(sys.dim(), 0xA11CE);
    for p in points {
        let ell = p.ell as usize;
        for n in 0..=horizon {
            let shifted = p.shift(n as i64)?;
            let phi = sys.evolve(n, p);
            let grow = m_growth * rate.ratio_pow(ell, n, lam);
            for v in &probes {
                let lhs = norm.eval(&shifted, &(&phi * v));
                let rhs = grow * norm.eval(p, v);
                if tol::rel_margin(lhs, rhs) < -tol::REL_SLACK {
                    return Err(LabError::HypothesisViolated(format!(
                        "growth bound fails at ell={ell}, n={n}: {lhs:.6e} > {rhs:.6e}"
                    )));
                }
            }
        }
    }

    let (l1, l2) = (witness.l1, witness.l2);
    let eta = rate.eta();
    let m2 = (m_growth * l2.powf(lam) * eta.powf(lam)).max(
        lam * m_growth * l2.powf(lam) * l1.powf(lam) / ((l1.powf(lam) - 1.0) * c_const) * t_norm,
    );
    let ln_n0_stable = eta.ln() + std::f64::consts::E * t_norm * m2 / c_const;
    let l_lower = c_const * eta.powf(-lam) * (1.0 - l1.powf(-lam)) / (m_growth * lam * t_norm);
    let ln_n0_unstable = eta.ln() + std::f64::consts::E * t_norm / (c_const * l_lower);
    let ln_n0 = ln_n0_stable.max(ln_n0_unstable);
    let k0 = k0_from_ln(ln_n0, l1);
    let a = exponent_from(k0, l2);
    let d1 = std::f64::consts::E * m2;
    let d2 = std::f64::consts::E / l_lower;
    let d_eq = d1.max(d2);
    let m_star = separation_block_count(d_eq, a, l1, l2);
    let c_lower = (1.0 / (m_growth * (lam * m_star as f64 * l2.ln()).exp()))
        * ((1.0 / d_eq) * (a * m_star as f64 * l1.ln()).exp()
            - d_eq * (-(a * m_star as f64) * l2.ln()).exp());

    let mut zeta = Vec::with_capacity(points.len());
    let mut projection_bound = Vec::with_capacity(points.len());
    for (id, p) in points.iter().enumerate() {
        let data = splitting.at(p)?;
        let z = zeta_at(norm, p, &data, 0x5ee1 + id as u64);
        zeta.push((id, z));
        projection_bound.push((id, 2.0 / z));
    }

    let cert = DichotomyCertificate {
        projections: splitting.to_projections(),
        lambda: ClassFn::Const(a),
        big_d: ClassFn::Const(d_eq),
        norm: norm.clone(),
    };
    let validation = verify_dichotomy(sys, &cert, rate, points, horizon)?;

    Ok(DerivedExponents {
        m2,
        n0: ln_n0.exp(),
        ln_n0,
        k0,
        a,
        b: a,
        d1,
        d2,
        m_star,
        c_lower,
        zeta,
        projection_bound,
        validation,
    })
}
