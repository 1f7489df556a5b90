//! Linear cocycles over a driver, random norms, and the model system.
//!
//! The cocycle is generated by one-step matrices `A(ell, omega)`; n-step
//! products are memoized in a byte-budgeted cache. Products are always
//! accumulated one step from the left, so a value returned from the cache is
//! bit-identical to one recomputed from scratch - the cache is an
//! optimization, never a semantic dependency.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{Driver, OrbitPoint, State};
use crate::error::{LabError, Result};
use crate::growth::GrowthRate;
use crate::tol;

// ---------------------------------------------------------------------------
// small linear-algebra helpers shared across the crate
// ---------------------------------------------------------------------------

pub use crate::linalg::{op_norm2, principal_angle_sin};

/// Deterministic unit vectors for operator-norm style probes.
pub fn seeded_unit_vectors(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            out.push(v / n);
        }
    }
    out
}

/// Basis vectors plus seeded probes; the standard test-vector set.
pub fn probe_vectors(dim: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut v: Vec<DVector<f64>> = (0..dim)
        .map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    v.extend(seeded_unit_vectors(dim, tol::NORM_PROBES, seed));
    v
}

/// Orthonormal basis of the column span, with rank detection.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let tol = tol::RANK_TOL * op_norm2(m).max(1.0);
    crate::linalg::orthonormal_columns(m, tol)
}

// ---------------------------------------------------------------------------
// random norms
// ---------------------------------------------------------------------------

trait NormKernel: Send + Sync {
    fn eval(&self, p: &OrbitPoint, v: &DVector<f64>) -> f64;
    /// Equivalence constants (c1, c2) with c1 |v|_2 <= |v|_p <= c2 |v|_2.
    fn equivalence(&self, p: &OrbitPoint, dim: usize) -> (f64, f64);
    fn scalar_weight(&self, p: &OrbitPoint) -> Option<f64>;
    fn spd_weight(&self, p: &OrbitPoint, dim: usize) -> Option<DMatrix<f64>>;
    fn label(&self) -> String;
}

struct EuclideanKernel;

impl NormKernel for EuclideanKernel {
    fn eval(&self, _p: &OrbitPoint, v: &DVector<f64>) -> f64 {
        v.norm()
    }
    fn equivalence(&self, _p: &OrbitPoint, _dim: usize) -> (f64, f64) {
        (1.0, 1.0)
    }
    fn scalar_weight(&self, _p: &OrbitPoint) -> Option<f64> {
        Some(1.0)
    }
    fn spd_weight(&self, _p: &OrbitPoint, _dim: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn label(&self) -> String {
        "euclidean".into()
    }
}

struct ScalarKernel<F: Fn(&OrbitPoint) -> f64 + Send + Sync> {
    weight: F,
}

impl<F: Fn(&OrbitPoint) -> f64 + Send + Sync> NormKernel for ScalarKernel<F> {
    fn eval(&self, p: &OrbitPoint, v: &DVector<f64>) -> f64 {
        (self.weight)(p) * v.norm()
    }
    fn equivalence(&self, p: &OrbitPoint, _dim: usize) -> (f64, f64) {
        let k = (self.weight)(p);
        (k, k)
    }
    fn scalar_weight(&self, p: &OrbitPoint) -> Option<f64> {
        Some((self.weight)(p))
    }
    fn spd_weight(&self, _p: &OrbitPoint, _dim: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn label(&self) -> String {
        "scalar".into()
    }
}

struct SpdKernel<F: Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync> {
    weight: F,
}

impl<F: Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync> NormKernel for SpdKernel<F> {
    fn eval(&self, p: &OrbitPoint, v: &DVector<f64>) -> f64 {
        let w = (self.weight)(p);
        (v.dot(&(&w * v))).max(0.0).sqrt()
    }
    fn equivalence(&self, p: &OrbitPoint, _dim: usize) -> (f64, f64) {
        let w = (self.weight)(p);
        let eig = w.symmetric_eigen().eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(0.0, f64::max);
        (lo.max(0.0).sqrt(), hi.max(0.0).sqrt())
    }
    fn scalar_weight(&self, _p: &OrbitPoint) -> Option<f64> {
        None
    }
    fn spd_weight(&self, p: &OrbitPoint, _dim: usize) -> Option<DMatrix<f64>> {
        Some((self.weight)(p))
    }
    fn label(&self) -> String {
        "spd".into()
    }
}

/// Closure-backed kernel for norms defined by orbit data (adapted norms).
struct FnKernel<F: Fn(&OrbitPoint, &DVector<f64>) -> f64 + Send + Sync> {
    eval: F,
    label: String,
}

impl<F: Fn(&OrbitPoint, &DVector<f64>) -> f64 + Send + Sync> NormKernel for FnKernel<F> {
    fn eval(&self, p: &OrbitPoint, v: &DVector<f64>) -> f64 {
        (self.eval)(p, v)
    }
    fn equivalence(&self, p: &OrbitPoint, dim: usize) -> (f64, f64) {
        // Probe-based estimate: an upper bound for c1 and a lower bound for
        // c2; exact for the norms this crate constructs only in tests that
        // use richer probe sets.
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for v in probe_vectors(dim, 0x5eed) {
            let r = (self.eval)(p, &v);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }
    fn scalar_weight(&self, _p: &OrbitPoint) -> Option<f64> {
        None
    }
    fn spd_weight(&self, _p: &OrbitPoint, _dim: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// A point-dependent norm equivalent to the Euclidean norm at every point.
#[derive(Clone)]
pub struct RandomNorm {
    kernel: Arc<dyn NormKernel>,
}

impl RandomNorm {
    pub fn euclidean() -> Self {
        RandomNorm {
            kernel: Arc::new(EuclideanKernel),
        }
    }

    /// `|v|_p = K(p) |v|_2` with `K >= 1`.
    pub fn scalar(weight: impl Fn(&OrbitPoint) -> f64 + Send + Sync + 'static) -> Self {
        RandomNorm {
            kernel: Arc::new(ScalarKernel { weight }),
        }
    }

    /// `|v|_p = sqrt(v^T W(p) v)` with W symmetric positive definite.
    pub fn spd(weight: impl Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        RandomNorm {
            kernel: Arc::new(SpdKernel { weight }),
        }
    }

    pub fn from_fn(
        label: impl Into<String>,
        eval: impl Fn(&OrbitPoint, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        RandomNorm {
            kernel: Arc::new(FnKernel {
                eval,
                label: label.into(),
            }),
        }
    }

    pub fn eval(&self, p: &OrbitPoint, v: &DVector<f64>) -> f64 {
        self.kernel.eval(p, v)
    }

    /// Equivalence constants to the Euclidean norm at a point.
    pub fn equivalence(&self, p: &OrbitPoint, dim: usize) -> (f64, f64) {
        self.kernel.equivalence(p, dim)
    }

    pub fn label(&self) -> String {
        self.kernel.label()
    }

    /// Operator norm of `m` as a map from the norm at `from` to the norm at
    /// `to`. Exact for scalar and SPD kernels; probe-based (a certified
    /// lower bound) for closure kernels.
    pub fn op_norm(&self, from: &OrbitPoint, to: &OrbitPoint, m: &DMatrix<f64>) -> f64 {
        if let (Some(kf), Some(kt)) = (
            self.kernel.scalar_weight(from),
            self.kernel.scalar_weight(to),
        ) {
            return kt / kf * op_norm2(m);
        }
        let dim = m.ncols();
        if let (Some(wf), Some(wt)) = (
            self.kernel.spd_weight(from, dim),
            self.kernel.spd_weight(to, dim),
        ) {
            if let (Some(cf), Some(ct)) = (wf.cholesky(), wt.cholesky()) {
                let lf_t_inv = cf
                    .l()
                    .transpose()
                    .try_inverse()
                    .expect("cholesky factor is invertible");
                return op_norm2(&(ct.l().transpose() * m * lf_t_inv));
            }
        }
        let mut best: f64 = 0.0;
        for v in probe_vectors(dim, 0x0b5e55) {
            let denom = self.kernel.eval(from, &v);
            if denom > 0.0 {
                best = best.max(self.kernel.eval(to, &(m * &v)) / denom);
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// product cache
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    state: State,
    ell: i64,
    n: u32,
}

struct CacheEntry {
    m: DMatrix<f64>,
    used: u64,
}

struct CacheInner {
    map: HashMap<CacheKey, CacheEntry>,
    bytes: usize,
    tick: u64,
}

/// Memo of n-step products keyed by (state, ell, n), evicting the least
/// recently used half whenever the byte budget is exceeded.
pub struct ProductCache {
    inner: Mutex<CacheInner>,
    budget: usize,
}

fn entry_bytes(dim: usize) -> usize {
    dim * dim * 8 + 64
}

impl ProductCache {
    pub fn new(budget: usize) -> Self {
        ProductCache {
            inner: Mutex::new(CacheInner {
                map: HashMap::new(),
                bytes: 0,
                tick: 0,
            }),
            budget,
        }
    }

    fn get(&self, key: &CacheKey) -> Option<DMatrix<f64>> {
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        inner.map.get_mut(key).map(|e| {
            e.used = tick;
            e.m.clone()
        })
    }

    fn put(&self, key: CacheKey, m: DMatrix<f64>) {
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        let bytes = entry_bytes(m.nrows());
        if inner.map.insert(key, CacheEntry { m, used: tick }).is_none() {
            inner.bytes += bytes;
        }
        if inner.bytes > self.budget {
            let mut ticks: Vec<u64> = inner.map.values().map(|e| e.used).collect();
            ticks.sort_unstable();
            let cutoff = ticks[ticks.len() / 2];
            let before = inner.map.len();
            inner.map.retain(|_, e| e.used > cutoff);
            let removed = before - inner.map.len();
            inner.bytes = inner.bytes.saturating_sub(removed * bytes);
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn cache_budget_from_env() -> usize {
    std::env::var("DICHOTOMY_LAB_CACHE_BYTES")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(tol::CACHE_BYTES_DEFAULT)
}

// ---------------------------------------------------------------------------
// the linear NRDS
// ---------------------------------------------------------------------------

type Generator = Arc<dyn Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync>;

static NRDS_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

/// A linear cocycle `Phi(n, ell, omega)` generated by one-step matrices over
/// a driver.
#[derive(Clone)]
pub struct Nrds {
    dim: usize,
    driver: Driver,
    generator: Generator,
    cache: Arc<ProductCache>,
    /// Distinguishes systems in caches shared across them; clones share
    /// the id together with the generator and product cache.
    instance_id: u64,
}

impl Nrds {
    pub fn new(
        dim: usize,
        driver: Driver,
        generator: impl Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Nrds {
            dim,
            driver,
            generator: Arc::new(generator),
            cache: Arc::new(ProductCache::new(cache_budget_from_env())),
            instance_id: NRDS_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
        }
    }

    pub fn instance_id(&self) -> u64 {
        self.instance_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn one_step(&self, p: &OrbitPoint) -> DMatrix<f64> {
        (self.generator)(p)
    }

    /// `Phi(n, p)`: the ordered product of one-step matrices along the orbit.
    /// Accumulation is always left-to-right one step at a time, so cached and
    /// fresh evaluations agree bit-for-bit.
    pub fn evolve(&self, n: usize, p: &OrbitPoint) -> DMatrix<f64> {
        if n == 0 {
            return DMatrix::identity(self.dim, self.dim);
        }
        let mut start = n;
        let mut acc = loop {
            if start == 0 {
                break DMatrix::identity(self.dim, self.dim);
            }
            let key = CacheKey {
                state: p.state,
                ell: p.ell,
                n: start as u32,
            };
            if let Some(m) = self.cache.get(&key) {
                break m;
            }
            start -= 1;
        };
        for k in start..n {
            let pk = p.shift(k as i64).expect("forward shift");
            acc = self.one_step(&pk) * acc;
            self.cache.put(
                CacheKey {
                    state: p.state,
                    ell: p.ell,
                    n: (k + 1) as u32,
                },
                acc.clone(),
            );
        }
        acc
    }

    pub fn apply(&self, n: usize, p: &OrbitPoint, v: &DVector<f64>) -> DVector<f64> {
        self.evolve(n, p) * v
    }
}

/// Cocycle-property report: relative residuals of every tested split.
#[derive(Clone, Debug, Serialize)]
pub struct CocycleReport {
    pub rows: Vec<CocycleRow>,
    pub max_residual: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CocycleRow {
    pub point_id: usize,
    pub m: usize,
    pub n: usize,
    pub residual: f64,
}

/// Checks `Phi(m+n, p) = Phi(m, shift^n p) Phi(n, p)` on all splits with
/// `m + n <= horizon`.
pub fn verify_cocycle(sys: &Nrds, points: &[OrbitPoint], horizon: usize) -> CocycleReport {
    let mut rows = Vec::new();
    let mut max_residual: f64 = 0.0;
    for (id, p) in points.iter().enumerate() {
        for total in 0..=horizon {
            let whole = sys.evolve(total, p);
            let scale = whole.norm().max(1e-300);
            for n in 0..=total {
                let m = total - n;
                let shifted = p.shift(n as i64).expect("forward shift");
                let split = sys.evolve(m, &shifted) * sys.evolve(n, p);
                let residual = (&whole - &split).norm() / scale;
                max_residual = max_residual.max(residual);
                rows.push(CocycleRow {
                    point_id: id,
                    m,
                    n,
                    residual,
                });
            }
        }
    }
    CocycleReport {
        rows,
        max_residual,
        pass: max_residual <= tol::COCYCLE_RESIDUAL,
    }
}

// ---------------------------------------------------------------------------
// projection families and the kernel-restricted inverse
// ---------------------------------------------------------------------------

/// Orthonormal range/kernel bases of a projection at one point.
pub struct ProjData {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Orthonormal basis of range P (d x rank).
    pub range_basis: DMatrix<f64>,
    /// Orthonormal basis of ker P = range Q (d x (d - rank)).
    pub kernel_basis: DMatrix<f64>,
}

/// A family of projections indexed by orbit points, with cached bases.
///
/// Bases come from a rank-revealing SVD with tolerance `RANK_TOL * |P|`.
#[derive(Clone)]
pub struct ProjectionFamily {
    f: Arc<dyn Fn(&OrbitPoint) -> Result<DMatrix<f64>> + Send + Sync>,
    cache: Arc<Mutex<HashMap<(State, i64), Arc<ProjData>>>>,
    inverse_cache: Arc<Mutex<HashMap<(u64, State, i64, u32), Arc<DMatrix<f64>>>>>,
}



impl ProjectionFamily {
    pub fn from_fn(f: impl Fn(&OrbitPoint) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self::try_from_fn(move |p| Ok(f(p)))
    }

    pub fn try_from_fn(
        f: impl Fn(&OrbitPoint) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        ProjectionFamily {
            f: Arc::new(f),
            cache: Arc::new(Mutex::new(HashMap::new())),
            inverse_cache: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    /// Constant family. Rejects matrices that are not projections.
    pub fn constant(p: DMatrix<f64>) -> Result<Self> {
        let residual = (&p * &p - &p).norm();
        let scale = p.norm().max(1.0);
        if residual > tol::PROJECTION_RESIDUAL * scale * scale.max(1.0) {
            return Err(LabError::InvalidProjection { residual });
        }
        Ok(Self::from_fn(move |_| p.clone()))
    }

    pub fn at(&self, point: &OrbitPoint) -> Result<Arc<ProjData>> {
        let key = (point.state, point.ell);
        if let Some(d) = self.cache.lock().unwrap().get(&key) {
            return Ok(d.clone());
        }
        let p = (self.f)(point)?;
        let dim = p.nrows();
        let q = DMatrix::identity(dim, dim) - &p;
        let rank_tol = tol::RANK_TOL * op_norm2(&p).max(1.0);
        let data = Arc::new(ProjData {
            range_basis: crate::linalg::orthonormal_columns(&p, rank_tol),
            kernel_basis: crate::linalg::orthonormal_columns(&q, rank_tol),
            p,
            q,
        });
        self.cache.lock().unwrap().insert(key, data.clone());
        Ok(data)
    }

    /// Residual of P^2 = P at a point, relative to |P|^2.
    pub fn idempotency_residual(&self, point: &OrbitPoint) -> Result<f64> {
        let d = self.at(point)?;
        Ok((&d.p * &d.p - &d.p).norm() / d.p.norm().max(1.0).powi(2))
    }
}

/// Inverts `Phi(n, p)` restricted to `ker P_p -> ker P_{shift^n p}` and
/// composes with `Q` at the shifted point, i.e. the backward map
/// `Phi(-n, ell+n, theta^n omega) Q`.
///
/// Fails with `SingularRestriction` when the restriction's smallest singular
/// value falls below `INVERTIBILITY_TOL` times its largest.
pub fn evolve_unstable_inverse(
    sys: &Nrds,
    proj: &ProjectionFamily,
    n: usize,
    p: &OrbitPoint,
) -> Result<DMatrix<f64>> {
    let key = (sys.instance_id(), p.state, p.ell, n as u32);
    if let Some(m) = proj.inverse_cache.lock().unwrap().get(&key) {
        return Ok(m.as_ref().clone());
    }
    let here = proj.at(p)?;
    let there = proj.at(&p.shift(n as i64)?)?;
    let k = here.kernel_basis.ncols();
    if there.kernel_basis.ncols() != k {
        return Err(LabError::SingularRestriction(format!(
            "kernel dimensions differ: {} vs {}",
            k,
            there.kernel_basis.ncols()
        )));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(sys.dim(), sys.dim()));
    }
    let phi = sys.evolve(n, p);
    let restricted = there.kernel_basis.transpose() * &phi * &here.kernel_basis;
    let (smin, smax) = crate::linalg::sigma_range(&restricted);
    if !(smin > tol::INVERTIBILITY_TOL * smax) || smax == 0.0 {
        return Err(LabError::SingularRestriction(format!(
            "restricted map has sigma_min/sigma_max = {:.3e}",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let inv = restricted
        .try_inverse()
        .ok_or_else(|| LabError::SingularRestriction("restricted map not invertible".into()))?;
    let result = &here.kernel_basis * inv * there.kernel_basis.transpose() * &there.q;

    let residual = (&phi * &result - &there.q).norm() / there.q.norm().max(1e-300);
    if there.q.norm() > 0.0 && residual > tol::KERNEL_INVERSE_RESIDUAL {
        return Err(LabError::SingularRestriction(format!(
            "inverse residual {residual:.3e} exceeds {:.0e}",
            tol::KERNEL_INVERSE_RESIDUAL
        )));
    }
    proj.inverse_cache
        .lock()
        .unwrap()
        .insert(key, Arc::new(result.clone()));
    Ok(result)
}

/// Pushes a range-P vector forward one step and re-projects onto the range
/// at the arrival point. For an equivariant family `P A = A P` this is
/// exactly the restricted cocycle action; numerically it removes the
/// round-off that unstable directions would amplify beyond recovery over
/// long windows.
pub fn stable_step(
    sys: &Nrds,
    proj: &ProjectionFamily,
    p: &OrbitPoint,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let next = p.shift(1)?;
    Ok(&proj.at(&next)?.p * (sys.one_step(p) * w))
}

// ---------------------------------------------------------------------------
// random-variable specs and the model system
// ---------------------------------------------------------------------------

/// Shift-forward invariant positive random variable: a function of the
/// orbit-class value only.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvariantSpec {
    Constant { value: f64 },
    /// `base + amp * u` where u in [0,1) is the class value.
    StateAffine { base: f64, amp: f64 },
}

impl InvariantSpec {
    pub fn eval(&self, p: &OrbitPoint) -> f64 {
        match self {
            InvariantSpec::Constant { value } => *value,
            InvariantSpec::StateAffine { base, amp } => base + amp * p.class_value(),
        }
    }

    /// Guarantees `eval > lower` globally from the parameters alone.
    pub fn validate_above(&self, name: &str, lower: f64) -> Result<()> {
        let min = match self {
            InvariantSpec::Constant { value } => *value,
            InvariantSpec::StateAffine { base, amp } => base + amp.min(0.0),
        };
        if min > lower {
            Ok(())
        } else {
            Err(LabError::config(
                name,
                format!("must stay above {lower}; worst case is {min}"),
            ))
        }
    }
}

/// Spec for the scalar norm weight `K(ell, omega) >= 1`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Constant { value: f64 },
    /// `base + amp * u(state)`, a bounded oscillation along the orbit.
    StateAffine { base: f64, amp: f64 },
    /// `nu_ell ^ epsilon`: nonuniformity growing with the time coordinate.
    NuPower { epsilon: f64 },
}

impl WeightSpec {
    pub fn eval(&self, p: &OrbitPoint, nu: Option<&GrowthRate>) -> f64 {
        match self {
            WeightSpec::Constant { value } => *value,
            WeightSpec::StateAffine { base, amp } => base + amp * p.driver.value(p.state),
            WeightSpec::NuPower { epsilon } => {
                let nu = nu.expect("NuPower weight requires a nu rate");
                nu.ratio_pow(0, p.ell as usize, *epsilon) * nu.value(0).powf(*epsilon)
            }
        }
    }

    pub fn validate(&self, nu: Option<&GrowthRate>) -> Result<()> {
        let ok = match self {
            WeightSpec::Constant { value } => *value >= 1.0,
            WeightSpec::StateAffine { base, amp } => base + amp.min(0.0) >= 1.0,
            WeightSpec::NuPower { epsilon } => {
                *epsilon >= 0.0 && nu.map(|r| r.value(0) >= 1.0).unwrap_or(false)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::config(
                "system.k",
                "norm weight must satisfy K >= 1 (NuPower needs nu_0 >= 1 and epsilon >= 0)",
            ))
        }
    }

    /// Exponent such that `K(ell, omega) <= nu_ell ^ gamma` globally, when
    /// one exists. Used to certify nonuniform bounds for model systems.
    pub fn nu_exponent(&self) -> Option<f64> {
        match self {
            WeightSpec::NuPower { epsilon } => Some(*epsilon),
            _ => None,
        }
    }

    /// Global upper bound for K when it is bounded (non-NuPower specs).
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            WeightSpec::Constant { value } => Some(*value),
            WeightSpec::StateAffine { base, amp } => Some(base + amp.max(0.0)),
            WeightSpec::NuPower { .. } => None,
        }
    }
}

/// The explicitly solvable system: `Phi = Phi_s + Phi_u` with
///
/// `Phi_s(n,p) = (K(p)/K(S^n p)) (G(S^n p)/G(p)) (mu_{l+n}/mu_l)^(-lambda) P`
/// `Phi_u(n,p) = (K(p)/K(S^n p)) (G(S^n p)/G(p)) (mu_{l+n}/mu_l)^(lambda) Q`
///
/// together with the random norm `|v|_p = K(p) |v|_2`. Here S is the skew
/// shift and `G(p) = D^(u(p))` modulates the orbit with the state value
/// `u(p) in [0,1)`, so the constant-factor bound `D` appears as the range of
/// the telescoping ratio `G(S^n p)/G(p) in [1/D, D]`. A bare multiplicative
/// `D` in front of `Phi_s` would break both cocycle axioms for `D != 1`
/// (products would accumulate `D^2` and the zero-step map would not be the
/// identity); the modulated form satisfies them exactly and produces the
/// same dichotomy bounds with constant `D * |P|` resp. `D * |Q|`.
#[derive(Clone)]
pub struct ModelSystem {
    pub nrds: Nrds,
    pub norm: RandomNorm,
    pub rate: GrowthRate,
    pub nu: Option<GrowthRate>,
    pub projection: DMatrix<f64>,
    pub complement: DMatrix<f64>,
    pub lambda: InvariantSpec,
    pub big_d: InvariantSpec,
    pub weight: WeightSpec,
}

impl ModelSystem {
    pub fn lambda_at(&self, p: &OrbitPoint) -> f64 {
        self.lambda.eval(p)
    }

    pub fn d_at(&self, p: &OrbitPoint) -> f64 {
        self.big_d.eval(p)
    }

    pub fn weight_at(&self, p: &OrbitPoint) -> f64 {
        self.weight.eval(p, self.nu.as_ref())
    }

    /// `G(p) = D^(u(p))`; its orbit ratios stay inside `[1/D, D]`.
    fn modulation(&self, p: &OrbitPoint) -> f64 {
        self.d_at(p).powf(p.driver.value(p.state))
    }

    /// Closed-form `Phi(n, p)`, the oracle the generated products must match.
    pub fn closed_form(&self, n: usize, p: &OrbitPoint) -> DMatrix<f64> {
        let lam = self.lambda_at(p);
        let shifted = p.shift(n as i64).expect("forward shift");
        let kr = self.weight_at(p) / self.weight_at(&shifted);
        let g = self.modulation(&shifted) / self.modulation(p);
        let ell = p.ell as usize;
        let contraction = self.rate.ratio_pow(ell, n, -lam);
        let expansion = self.rate.ratio_pow(ell, n, lam);
        &self.projection * (kr * g * contraction) + &self.complement * (kr * g * expansion)
    }

    /// Closed-form backward map `Phi(-n, ell+n, theta^n omega) Q`.
    pub fn closed_form_unstable_inverse(&self, n: usize, p: &OrbitPoint) -> DMatrix<f64> {
        let lam = self.lambda_at(p);
        let shifted = p.shift(n as i64).expect("forward shift");
        let kr = self.weight_at(&shifted) / self.weight_at(p);
        let g = self.modulation(p) / self.modulation(&shifted);
        let ell = p.ell as usize;
        &self.complement * (kr * g * self.rate.ratio_pow(ell, n, -lam))
    }

    /// Operator norms of P and Q in the Euclidean norm; the certificate
    /// constant is `D * max(|P|, |Q|, 1)`.
    pub fn projection_norms(&self) -> (f64, f64) {
        (op_norm2(&self.projection), op_norm2(&self.complement))
    }
}

/// Builds the model system over a driver and growth rate.
///
/// `lambda` must stay positive and `big_d` at least 1; both are functions of
/// the orbit class, which makes them shift-forward invariant by construction.
pub fn build_model(
    rate: &GrowthRate,
    driver: &Driver,
    projection: DMatrix<f64>,
    lambda: InvariantSpec,
    big_d: InvariantSpec,
    weight: WeightSpec,
    nu: Option<GrowthRate>,
) -> Result<ModelSystem> {
    let dim = projection.nrows();
    if projection.ncols() != dim || dim == 0 {
        return Err(LabError::config("system.projection", "must be square and nonempty"));
    }
    let residual = (&projection * &projection - &projection).norm();
    if residual > tol::PROJECTION_RESIDUAL * projection.norm().max(1.0).powi(2) {
        return Err(LabError::InvalidProjection { residual });
    }
    lambda.validate_above("system.lambda", 0.0)?;
    big_d.validate_above("system.bigd", 1.0 - 1e-15)?;
    weight.validate(nu.as_ref())?;

    let complement = DMatrix::identity(dim, dim) - &projection;
    let model = ModelSystem {
        nrds: Nrds::new(dim, *driver, |_| unreachable!("replaced below")),
        norm: RandomNorm::euclidean(),
        rate: rate.clone(),
        nu,
        projection,
        complement,
        lambda,
        big_d,
        weight,
    };

    // Wire the generator and the norm to the closed form.
    let gen_model = model.clone();
    let nrds = Nrds::new(dim, *driver, move |p| gen_model.closed_form(1, p));
    let norm_model = model.clone();
    let norm = RandomNorm::scalar(move |p| norm_model.weight_at(p));

    Ok(ModelSystem {
        nrds,
        norm,
        ..model
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{sample_orbits, splitmix64};
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn diag_system(entries: Vec<f64>) -> Nrds {
        let d = Driver::cyclic(5).unwrap();
        let dim = entries.len();
        Nrds::new(dim, d, move |_| {
            DMatrix::from_diagonal(&DVector::from_vec(entries.clone()))
        })
    }

    fn point(sys: &Nrds) -> OrbitPoint {
        OrbitPoint::new(*sys.driver(), 0, sys.driver().initial_state())
    }

    #[test]
    fn evolve_zero_is_identity() {
        let sys = diag_system(vec![0.5, 2.0]);
        let p = point(&sys);
        assert_eq!(sys.evolve(0, &p), DMatrix::identity(2, 2));
    }

    #[test]
    fn evolve_two_steps_matches_product() {
        // Per-point generator; the two-step product must respect order.
        let d = Driver::cyclic(3).unwrap();
        let sys = Nrds::new(2, d, |p| {
            let t = p.ell as f64 + p.driver.value(p.state);
            DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0])
        });
        let p = OrbitPoint::new(d, 0, State::Cyclic(1));
        let a0 = sys.one_step(&p);
        let a1 = sys.one_step(&p.shift(1).unwrap());
        assert_relative_eq!(sys.evolve(2, &p), &a1 * &a0, max_relative = 1e-15);
    }

    #[test]
    fn evolve_diagonal_powers() {
        let sys = diag_system(vec![0.5, 2.0]);
        let p = point(&sys);
        let m = sys.evolve(3, &p);
        assert_relative_eq!(m[(0, 0)], 0.125, max_relative = 1e-15);
        assert_relative_eq!(m[(1, 1)], 8.0, max_relative = 1e-15);
    }

    #[test]
    fn cocycle_property_random_entries() {
        let d = Driver::bernoulli_window(3, 512).unwrap();
        let sys = Nrds::new(3, d, |p| {
            let h = splitmix64(p.driver.state_digest(p.state) ^ (p.ell as u64) << 7);
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))
        });
        let pts = sample_orbits(sys.driver(), 3, 17);
        let report = verify_cocycle(&sys, &pts, 8);
        assert!(report.pass, "max residual {}", report.max_residual);
    }

    #[test]
    fn cocycle_property_constant_matrix() {
        let sys = diag_system(vec![0.3, 1.7, 0.9]);
        let pts = sample_orbits(sys.driver(), 2, 5);
        let report = verify_cocycle(&sys, &pts, 6);
        assert!(report.max_residual <= 1e-14);
    }

    #[test]
    fn unstable_inverse_identity_and_scalar() {
        let sys = diag_system(vec![0.5, 2.0]);
        let p = point(&sys);
        let proj =
            ProjectionFamily::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]))
                .unwrap();
        // n = 0: the map is Q itself.
        let r0 = evolve_unstable_inverse(&sys, &proj, 0, &p).unwrap();
        assert_relative_eq!(r0, proj.at(&p).unwrap().q.clone(), max_relative = 1e-14);
        // n = 2 on span(e2): inverse of multiplying by 4.
        let r2 = evolve_unstable_inverse(&sys, &proj, 2, &p).unwrap();
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_relative_eq!(&r2 * &e2, &e2 * 0.25, max_relative = 1e-13);
    }

    #[test]
    fn unstable_inverse_detects_singular() {
        let sys = diag_system(vec![1.0, 0.0]);
        let p = point(&sys);
        let proj =
            ProjectionFamily::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]))
                .unwrap();
        assert!(matches!(
            evolve_unstable_inverse(&sys, &proj, 1, &p),
            Err(LabError::SingularRestriction(_))
        ));
    }

    fn standard_model() -> ModelSystem {
        let rate = GrowthRate::exponential(E).unwrap();
        let d = Driver::cyclic(7).unwrap();
        build_model(
            &rate,
            &d,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            InvariantSpec::Constant { value: 1.0 },
            InvariantSpec::Constant { value: 1.0 },
            WeightSpec::Constant { value: 1.0 },
            None,
        )
        .unwrap()
    }

    #[test]
    fn model_constant_case_is_diagonal() {
        let model = standard_model();
        let p = point(&model.nrds);
        for n in 0..6 {
            let m = model.nrds.evolve(n, &p);
            assert_relative_eq!(m[(0, 0)], E.powi(-(n as i32)), max_relative = 1e-12);
            assert_relative_eq!(m[(1, 1)], E.powi(n as i32), max_relative = 1e-12);
            assert!(m[(0, 1)].abs() < 1e-15 && m[(1, 0)].abs() < 1e-15);
        }
    }

    #[test]
    fn model_products_match_closed_form() {
        let rate = GrowthRate::polynomial(1).unwrap();
        let d = Driver::cyclic(5).unwrap();
        let model = build_model(
            &rate,
            &d,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            InvariantSpec::StateAffine { base: 0.5, amp: 0.5 },
            InvariantSpec::StateAffine { base: 1.0, amp: 1.0 },
            WeightSpec::StateAffine { base: 1.0, amp: 0.75 },
            None,
        )
        .unwrap();
        let pts = sample_orbits(&d, 5, 3);
        for p in &pts {
            for shift in 0..3 {
                let p = p.shift(shift).unwrap();
                for n in 0..10 {
                    let got = model.nrds.evolve(n, &p);
                    let want = model.closed_form(n, &p);
                    assert_relative_eq!(got, want, max_relative = 1e-11);
                }
            }
        }
        let report = verify_cocycle(&model.nrds, &pts, 8);
        assert!(report.max_residual <= 1e-12);
    }

    #[test]
    fn model_unstable_inverse_matches_closed_form() {
        let model = standard_model();
        let proj = ProjectionFamily::constant(model.projection.clone()).unwrap();
        let p = point(&model.nrds).shift(2).unwrap();
        for n in 0..5 {
            let got = evolve_unstable_inverse(&model.nrds, &proj, n, &p).unwrap();
            let want = model.closed_form_unstable_inverse(n, &p);
            assert_relative_eq!(got, want, max_relative = 1e-11);
        }
    }

    #[test]
    fn model_pure_contraction_when_projection_is_identity() {
        let rate = GrowthRate::exponential(E).unwrap();
        let d = Driver::cyclic(3).unwrap();
        let model = build_model(
            &rate,
            &d,
            DMatrix::identity(2, 2),
            InvariantSpec::Constant { value: 1.0 },
            InvariantSpec::Constant { value: 2.0 },
            WeightSpec::Constant { value: 1.0 },
            None,
        )
        .unwrap();
        let p = point(&model.nrds);
        let m = model.nrds.evolve(4, &p);
        // Q = 0: only the contracting part remains.
        assert!(op_norm2(&m) <= 2.0 * E.powi(-4) * (1.0 + 1e-12));
    }

    #[test]
    fn model_rejects_bad_projection() {
        let rate = GrowthRate::exponential(E).unwrap();
        let d = Driver::cyclic(3).unwrap();
        let out = build_model(
            &rate,
            &d,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]),
            InvariantSpec::Constant { value: 1.0 },
            InvariantSpec::Constant { value: 1.0 },
            WeightSpec::Constant { value: 1.0 },
            None,
        );
        assert!(matches!(out.err(), Some(LabError::InvalidProjection { .. })));
    }

    #[test]
    fn model_stable_bound_holds() {
        // |Phi(n,p) P v|_(shift^n p) <= D |P| (mu-ratio)^-lambda |v|_p.
        let rate = GrowthRate::polynomial(1).unwrap();
        let d = Driver::cyclic(4).unwrap();
        let rot = {
            let c = 0.6f64.cos();
            let s = 0.6f64.sin();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        };
        let p_mat = &rot * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]) * rot.transpose();
        let model = build_model(
            &rate,
            &d,
            p_mat,
            InvariantSpec::Constant { value: 1.0 },
            InvariantSpec::Constant { value: 1.5 },
            WeightSpec::StateAffine { base: 1.0, amp: 0.5 },
            None,
        )
        .unwrap();
        let (pn, _) = model.projection_norms();
        for p0 in sample_orbits(&d, 4, 9) {
            for ell in [0i64, 3] {
                let p = p0.shift(ell).unwrap();
                for n in 0..12usize {
                    let shifted = p.shift(n as i64).unwrap();
                    for v in probe_vectors(2, 7) {
                        let lhs = model
                            .norm
                            .eval(&shifted, &(model.nrds.evolve(n, &p) * &model.projection * &v));
                        let rhs = model.d_at(&p)
                            * pn
                            * model.rate.ratio_pow(p.ell as usize, n, -model.lambda_at(&p))
                            * model.norm.eval(&p, &v);
                        assert!(
                            lhs <= rhs * (1.0 + 1e-12),
                            "stable bound violated: {lhs} > {rhs}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn random_norm_equivalence_constants() {
        let d = Driver::cyclic(3).unwrap();
        let p = OrbitPoint::new(d, 0, State::Cyclic(1));
        let norm = RandomNorm::scalar(|q| 2.0 + q.driver.value(q.state));
        let (c1, c2) = norm.equivalence(&p, 2);
        assert!(c1 > 0.0 && c1 == c2);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(norm.eval(&p, &v), c1 * 5.0, max_relative = 1e-15);

        let spd = RandomNorm::spd(|_| DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]));
        let (c1, c2) = spd.equivalence(&p, 2);
        assert_relative_eq!(c1, 1.0, max_relative = 1e-12);
        assert_relative_eq!(c2, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn op_norm_scalar_and_spd_agree_with_probes() {
        let d = Driver::cyclic(3).unwrap();
        let p = OrbitPoint::new(d, 0, State::Cyclic(0));
        let q = p.shift(1).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);

        let norm = RandomNorm::scalar(|pt| 1.0 + pt.driver.value(pt.state));
        let exact = norm.op_norm(&p, &q, &m);
        let mut probed: f64 = 0.0;
        for v in seeded_unit_vectors(2, 64, 5) {
            probed = probed.max(norm.eval(&q, &(&m * &v)) / norm.eval(&p, &v));
        }
        assert!(probed <= exact * (1.0 + 1e-10));
        assert!(probed >= exact * 0.95);

        let spd = RandomNorm::spd(|pt| {
            let t = 1.0 + pt.driver.value(pt.state);
            DMatrix::from_row_slice(2, 2, &[t, 0.2, 0.2, 1.0])
        });
        let exact = spd.op_norm(&p, &q, &m);
        let mut probed: f64 = 0.0;
        for v in seeded_unit_vectors(2, 64, 6) {
            probed = probed.max(spd.eval(&q, &(&m * &v)) / spd.eval(&p, &v));
        }
        assert!(probed <= exact * (1.0 + 1e-10));
        assert!(probed >= exact * 0.95);
    }

    #[test]
    fn cache_evicts_under_budget() {
        let d = Driver::cyclic(3).unwrap();
        let cache = ProductCache::new(entry_bytes(2) * 8);
        for i in 0..100i64 {
            cache.put(
                CacheKey {
                    state: State::Cyclic(0),
                    ell: i,
                    n: 1,
                },
                DMatrix::identity(2, 2),
            );
        }
        assert!(cache.len() < 100);
        // Cached chains still reproduce the same products.
        let sys = Nrds::new(2, d, |p| {
            DMatrix::from_row_slice(2, 2, &[1.0, p.ell as f64, 0.0, 1.0])
        });
        let p = OrbitPoint::new(d, 0, State::Cyclic(0));
        let fresh = sys.evolve(7, &p);
        let cached = sys.evolve(7, &p);
        assert_eq!(fresh, cached);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn cocycle_split_agrees(seed in 0u64..1000, m in 0usize..6, n in 0usize..6) {
                let d = Driver::bernoulli_window(seed, 256).unwrap();
                let sys = Nrds::new(2, d, |p| {
                    let h = splitmix64(p.driver.state_digest(p.state) ^ (p.ell as u64));
                    let mut rng = ChaCha8Rng::seed_from_u64(h);
                    DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))
                });
                let p = OrbitPoint::new(d, 0, d.initial_state());
                let whole = sys.evolve(m + n, &p);
                let split = sys.evolve(m, &p.shift(n as i64).unwrap()) * sys.evolve(n, &p);
                let denom = whole.norm().max(1e-12);
                prop_assert!((whole - split).norm() / denom <= 1e-10);
            }
        }
    }
}
