//! Random nonuniform (mu,nu)-dichotomies and the adapted-norm equivalence.
//!
//! A (mu,nu)-certificate states bounds in the plain space norm with a
//! nonuniformity penalty `nu_l^epsilon` at the initial time; the strong
//! variant also bounds forward growth along the kernel by
//! `K (mu-ratio)^b nu_l^gamma` with `b >= lambda`. The adapted norm
//!
//! `|v|_p = sup_n |Phi(n,p) P v| ratio^lambda
//!        + sup_{n<=l} |Phi(-n,l,w) Q v| (mu_l/mu_{l-n})^lambda
//!        + sup_{n>=1} |Phi(n,p) Q v| ratio^-b`
//!
//! turns a strong (mu,nu)-dichotomy into a mu-dichotomy with stable
//! constant exactly 1 and unstable constant 2, growth constant 3; the
//! backward direction recovers (mu,nu)-bounds from the sandwich
//! `|v| <= |v|_p <= Kbar nu_l^epsbar |v|`.

use nalgebra::DVector;
use serde::Serialize;
#[cfg(test)]
use nalgebra::DMatrix;

use crate::cocycle::{
    evolve_unstable_inverse, probe_vectors, stable_step, ModelSystem, Nrds, ProjectionFamily,
    RandomNorm,
};
use crate::dichotomy::{bound_row, worst_over, BoundReport, ClassFn, DichotomyCertificate};
use crate::driver::OrbitPoint;
use crate::error::{LabError, Result};
use crate::growth::GrowthRate;
use crate::tol;

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct StrongBounds {
    pub big_k: ClassFn,
    pub b: ClassFn,
    pub gamma: ClassFn,
}

/// Certificate of a random nonuniform (mu,nu)-dichotomy, measured in the
/// space norm.
#[derive(Clone)]
pub struct MuNuCertificate {
    pub projections: ProjectionFamily,
    pub mu: GrowthRate,
    pub nu: GrowthRate,
    pub lambda: ClassFn,
    pub big_d: ClassFn,
    pub epsilon: ClassFn,
    pub strong: Option<StrongBounds>,
}

impl MuNuCertificate {
    /// `Kbar = 2D + K`, the sandwich constant of the adapted norm.
    pub fn k_bar(&self, p: &OrbitPoint) -> Result<f64> {
        let strong = self.strong.as_ref().ok_or_else(|| {
            LabError::CertificateRequired("strong bounds needed for the adapted norm".into())
        })?;
        Ok(2.0 * self.big_d.eval(p)? + strong.big_k.eval(p)?)
    }

    /// `epsbar = max(epsilon, gamma)`.
    pub fn eps_bar(&self, p: &OrbitPoint) -> Result<f64> {
        let strong = self.strong.as_ref().ok_or_else(|| {
            LabError::CertificateRequired("strong bounds needed for the adapted norm".into())
        })?;
        Ok(self.epsilon.eval(p)?.max(strong.gamma.eval(p)?))
    }
}

/// The certificate a model system carries when its norm weight is a power
/// of `nu`: the weight ratio `K(p)/K(S^n p) <= nu_l^epsilon` supplies the
/// nonuniformity, the orbit modulation supplies the constant.
pub fn munu_certificate_from_model(model: &ModelSystem, nu: &GrowthRate) -> Result<MuNuCertificate> {
    if nu.value(0) < 1.0 {
        return Err(LabError::config("nu", "nu_0 must be at least 1"));
    }
    let (pn, qn) = model.projection_norms();
    let epsilon = model.weight.nu_exponent().unwrap_or(0.0);
    let k_sup = model.weight.sup_bound().unwrap_or(1.0);
    let scale_d = pn.max(qn).max(1.0) * k_sup.max(1.0);
    Ok(MuNuCertificate {
        projections: ProjectionFamily::constant(model.projection.clone())?,
        mu: model.rate.clone(),
        nu: nu.clone(),
        lambda: ClassFn::Spec {
            spec: model.lambda.clone(),
            scale: 1.0,
        },
        big_d: ClassFn::Spec {
            spec: model.big_d.clone(),
            scale: scale_d,
        },
        epsilon: ClassFn::Const(epsilon),
        strong: Some(StrongBounds {
            big_k: ClassFn::Spec {
                spec: model.big_d.clone(),
                scale: qn.max(1.0) * k_sup.max(1.0),
            },
            b: ClassFn::Spec {
                spec: model.lambda.clone(),
                scale: 1.0,
            },
            gamma: ClassFn::Const(epsilon),
        }),
    })
}

/// Verifies the (mu,nu) bounds in the space norm on the sampled grid, as
/// probe maxima over basis vectors plus seeded unit vectors.
pub fn verify_munu(
    sys: &Nrds,
    cert: &MuNuCertificate,
    points: &[OrbitPoint],
    horizon: usize,
    seed: u64,
) -> Result<BoundReport> {
    let probes = probe_vectors(sys.dim(), seed);
    let mut rows = Vec::new();
    for (id, p) in points.iter().enumerate() {
        let lam = cert.lambda.eval(p)?;
        let d = cert.big_d.eval(p)?;
        let eps = cert.epsilon.eval(p)?;
        let ell = p.ell as usize;
        let nu_pen = cert.nu.ratio_pow(0, ell, eps) * cert.nu.value(0).powf(eps);
        let here = cert.projections.at(p)?;

        for n in 0..=horizon {
            let phi_p = sys.evolve(n, p) * &here.p;
            let rhs = d * cert.mu.ratio_pow(ell, n, -lam) * nu_pen;
            let lhs = probes
                .iter()
                .map(|v| (&phi_p * v).norm())
                .fold(0.0f64, f64::max);
            rows.push(bound_row(id, p.ell, n, "munu_stable", lhs, rhs));

            if let Some(strong) = &cert.strong {
                let bb = strong.b.eval(p)?;
                let kk = strong.big_k.eval(p)?;
                let gg = strong.gamma.eval(p)?;
                let phi_q = sys.evolve(n, p) * &here.q;
                let rhs = kk
                    * cert.mu.ratio_pow(ell, n, bb)
                    * cert.nu.ratio_pow(0, ell, gg)
                    * cert.nu.value(0).powf(gg);
                let lhs = probes
                    .iter()
                    .map(|v| (&phi_q * v).norm())
                    .fold(0.0f64, f64::max);
                rows.push(bound_row(id, p.ell, n, "munu_strong", lhs, rhs));
            }

            // Backward bound at l, for 0 <= n <= l.
            if n <= ell {
                let back = p.shift(-(n as i64))?;
                let inv = evolve_unstable_inverse(sys, &cert.projections, n, &back)?;
                let rhs = d * cert.mu.ratio_pow(ell - n, n, -lam) * nu_pen;
                let lhs = probes
                    .iter()
                    .map(|v| (&inv * v).norm())
                    .fold(0.0f64, f64::max);
                rows.push(bound_row(id, p.ell, n, "munu_unstable", lhs, rhs));
            }
        }
    }
    Ok(BoundReport::from_rows(rows))
}

// ---------------------------------------------------------------------------
// the adapted norm
// ---------------------------------------------------------------------------

/// The rate-weighted orbit-sup norm built from a strong (mu,nu)-certificate.
#[derive(Clone)]
pub struct AdaptedNorm {
    sys: Nrds,
    pub cert: MuNuCertificate,
    /// Truncation horizon of the forward sups.
    pub horizon: usize,
}

impl AdaptedNorm {
    /// Stable and unstable parts, with the forward sups truncated at
    /// `fwd_horizon` (consistency device: a vector already pushed n steps
    /// is evaluated with horizon reduced by n, so its sup terms embed into
    /// the reference norm's sup).
    pub fn eval_parts(
        &self,
        p: &OrbitPoint,
        v: &DVector<f64>,
        fwd_horizon: usize,
    ) -> Result<(f64, f64)> {
        let lam = self.cert.lambda.eval(p)?;
        let strong = self.cert.strong.as_ref().ok_or_else(|| {
            LabError::CertificateRequired("strong bounds needed for the adapted norm".into())
        })?;
        let bb = strong.b.eval(p)?;
        let ell = p.ell as usize;
        let here = self.cert.projections.at(p)?;
        let pv = &here.p * v;
        let qv = &here.q * v;

        let mut stable: f64 = 0.0;
        let mut w = pv;
        for n in 0..=fwd_horizon {
            stable = stable.max(w.norm() * self.cert.mu.ratio_pow(ell, n, lam));
            if n < fwd_horizon {
                let at = p.shift(n as i64)?;
                w = stable_step(&self.sys, &self.cert.projections, &at, &w)?;
            }
        }

        let mut unstable: f64 = 0.0;
        for n in 0..=ell {
            let back = p.shift(-(n as i64))?;
            let inv = evolve_unstable_inverse(&self.sys, &self.cert.projections, n, &back)?;
            let w = &inv * v;
            unstable = unstable.max(w.norm() * self.cert.mu.ratio_pow(ell - n, n, lam));
        }
        let mut fwd_kernel: f64 = 0.0;
        for n in 1..=fwd_horizon {
            let w = self.sys.evolve(n, p) * &qv;
            fwd_kernel = fwd_kernel.max(w.norm() * self.cert.mu.ratio_pow(ell, n, -bb));
        }
        Ok((stable, unstable + fwd_kernel))
    }

    pub fn eval(&self, p: &OrbitPoint, v: &DVector<f64>) -> Result<f64> {
        let (s, u) = self.eval_parts(p, v, self.horizon)?;
        Ok(s + u)
    }

    /// Wraps the adapted norm as a point norm usable in certificates.
    /// Evaluation uses the full truncation horizon.
    pub fn as_random_norm(&self) -> RandomNorm {
        let me = self.clone();
        RandomNorm::from_fn("adapted", move |p, v| {
            me.eval(p, v).expect("adapted norm evaluation")
        })
    }

    /// The mu-dichotomy certificate this norm induces: the same projections
    /// and exponent, constant 2 (stable side holds with 1, unstable with 2).
    pub fn mu_certificate(&self) -> DichotomyCertificate {
        DichotomyCertificate {
            projections: self.cert.projections.clone(),
            lambda: self.cert.lambda.clone(),
            big_d: ClassFn::Const(2.0),
            norm: self.as_random_norm(),
        }
    }
}

/// Picks the truncation horizon: the first n where the certificate bound
/// falls below `ADAPTED_TAIL_DROP` of the zero-step scale, capped.
fn default_adapted_horizon(cert: &MuNuCertificate, p: &OrbitPoint) -> Result<usize> {
    let lam = cert.lambda.eval(p)?;
    let d = cert.big_d.eval(p)?;
    let eps = cert.epsilon.eval(p)?;
    let ell = p.ell as usize;
    let pen = d * cert.nu.ratio_pow(0, ell, eps) * cert.nu.value(0).powf(eps);
    for n in 0..tol::ADAPTED_HORIZON_CAP {
        if pen * cert.mu.ratio_pow(ell, n, -lam) <= tol::ADAPTED_TAIL_DROP {
            return Ok(n);
        }
    }
    Ok(tol::ADAPTED_HORIZON_CAP)
}

/// Builds the adapted norm, choosing the horizon from the certificate decay
/// when `horizon` is `None`, and rejecting horizons whose final sup term
/// still strictly attains the sup on probe vectors.
pub fn build_adapted_norm(
    sys: &Nrds,
    cert: &MuNuCertificate,
    horizon: Option<usize>,
    points: &[OrbitPoint],
    seed: u64,
) -> Result<AdaptedNorm> {
    if cert.strong.is_none() {
        return Err(LabError::CertificateRequired(
            "strong bounds needed for the adapted norm".into(),
        ));
    }
    let mut h = 0usize;
    for p in points {
        h = h.max(default_adapted_horizon(cert, p)?);
    }
    let horizon = horizon.unwrap_or(h).max(2);
    let anorm = AdaptedNorm {
        sys: sys.clone(),
        cert: cert.clone(),
        horizon,
    };

    // Stabilization check: on probe vectors, the last forward term must not
    // strictly dominate everything before it.
    let probes = probe_vectors(sys.dim(), seed);
    for p in points {
        let lam = cert.lambda.eval(p)?;
        let strong = cert.strong.as_ref().unwrap();
        let bb = strong.b.eval(p)?;
        let ell = p.ell as usize;
        let here = cert.projections.at(p)?;
        for v in &probes {
            let qv = &here.q * v;
            let mut head_s: f64 = 0.0;
            let mut head_u: f64 = 0.0;
            let mut w = &here.p * v;
            for n in 0..horizon {
                head_s = head_s.max(w.norm() * cert.mu.ratio_pow(ell, n, lam));
                if n >= 1 {
                    head_u = head_u
                        .max((sys.evolve(n, p) * &qv).norm() * cert.mu.ratio_pow(ell, n, -bb));
                }
                let at = p.shift(n as i64)?;
                w = stable_step(sys, &cert.projections, &at, &w)?;
            }
            let last_s = w.norm() * cert.mu.ratio_pow(ell, horizon, lam);
            let last_u =
                (sys.evolve(horizon, p) * &qv).norm() * cert.mu.ratio_pow(ell, horizon, -bb);
            if last_s > head_s * (1.0 + 1e-10) + tol::ADAPTED_TAIL_DROP
                || last_u > head_u * (1.0 + 1e-10) + tol::ADAPTED_TAIL_DROP
            {
                return Err(LabError::HorizonInsufficient(format!(
                    "forward sup still rising at n = {horizon} (ell = {ell})"
                )));
            }
        }
    }
    Ok(anorm)
}

// ---------------------------------------------------------------------------
// adapted-norm bounds (forward direction)
// ---------------------------------------------------------------------------

/// Checks, in the adapted norm: the sandwich, the stable bound with
/// constant exactly 1, the backward-unstable bound with constant 2, the
/// forward-kernel bound `2 ratio^b`, and the combined growth bound with
/// constant 3 and exponent b.
pub fn verify_adapted_bounds(
    sys: &Nrds,
    cert: &MuNuCertificate,
    anorm: &AdaptedNorm,
    points: &[OrbitPoint],
    horizon: usize,
    seed: u64,
) -> Result<BoundReport> {
    let probes = probe_vectors(sys.dim(), seed);
    let mut rows = Vec::new();
    let full = anorm.horizon;
    for (id, p) in points.iter().enumerate() {
        let lam = cert.lambda.eval(p)?;
        let strong = cert.strong.as_ref().ok_or_else(|| {
            LabError::CertificateRequired("strong bounds needed".into())
        })?;
        let bb = strong.b.eval(p)?;
        let ell = p.ell as usize;
        let k_bar = cert.k_bar(p)?;
        let eps_bar = cert.eps_bar(p)?;
        let nu_pen = cert.nu.ratio_pow(0, ell, eps_bar) * cert.nu.value(0).powf(eps_bar);
        let here = cert.projections.at(p)?;

        // Sandwich rows (n = 0).
        let (lhs, rhs) = worst_over(probes.iter().map(|v| {
            let a = anorm.eval(p, v).expect("adapted eval");
            (v.norm(), a)
        }));
        rows.push(bound_row(id, p.ell, 0, "ln1_lower", lhs, rhs));
        let (lhs, rhs) = worst_over(probes.iter().map(|v| {
            let a = anorm.eval(p, v).expect("adapted eval");
            (a, k_bar * nu_pen * v.norm())
        }));
        rows.push(bound_row(id, p.ell, 0, "ln1_upper", lhs, rhs));

        for n in 0..=horizon {
            let shifted = p.shift(n as i64)?;
            let phi = sys.evolve(n, p);
            let fwd = full.saturating_sub(n);

            // Stable bound, constant exactly 1.
            let (lhs, rhs) = worst_over(probes.iter().map(|v| {
                let w = &phi * (&here.p * v);
                let lhs = anorm.eval_parts(&shifted, &w, fwd).map(|(s, u)| s + u).unwrap();
                let rhs = cert.mu.ratio_pow(ell, n, -lam) * anorm.eval(p, v).unwrap();
                (lhs, rhs)
            }));
            rows.push(bound_row(id, p.ell, n, "stable_one", lhs, rhs));

            // Forward kernel growth, constant 2, exponent b.
            let (lhs, rhs) = worst_over(probes.iter().map(|v| {
                let w = &phi * (&here.q * v);
                let lhs = anorm.eval_parts(&shifted, &w, fwd).map(|(s, u)| s + u).unwrap();
                let rhs = 2.0 * cert.mu.ratio_pow(ell, n, bb) * anorm.eval(p, v).unwrap();
                (lhs, rhs)
            }));
            rows.push(bound_row(id, p.ell, n, "kernel_two", lhs, rhs));

            // Combined growth, constant 3, exponent b.
            let (lhs, rhs) = worst_over(probes.iter().map(|v| {
                let w = &phi * v;
                let lhs = anorm.eval_parts(&shifted, &w, fwd).map(|(s, u)| s + u).unwrap();
                let rhs = 3.0 * cert.mu.ratio_pow(ell, n, bb) * anorm.eval(p, v).unwrap();
                (lhs, rhs)
            }));
            rows.push(bound_row(id, p.ell, n, "growth_three", lhs, rhs));

            // Backward-unstable bound, constant 2.
            if n <= ell {
                let back = p.shift(-(n as i64))?;
                let inv = evolve_unstable_inverse(sys, &cert.projections, n, &back)?;
                let (lhs, rhs) = worst_over(probes.iter().map(|v| {
                    let w = &inv * v;
                    let lhs = anorm.eval_parts(&back, &w, full).map(|(s, u)| s + u).unwrap();
                    let rhs = 2.0
                        * cert.mu.ratio_pow(ell - n, n, -lam)
                        * anorm.eval(p, v).unwrap();
                    (lhs, rhs)
                }));
                rows.push(bound_row(id, p.ell, n, "unstable_two", lhs, rhs));
            }
        }
    }
    Ok(BoundReport::from_rows(rows))
}

// ---------------------------------------------------------------------------
// extraction (backward direction)
// ---------------------------------------------------------------------------

/// Recovers a (mu,nu)-certificate from a mu-dichotomy in a random norm with
/// the sandwich `|v| <= |v|_p <= kbar nu_l^epsbar |v|` and the growth pair
/// `(m_bound, lambda_bar)`:
/// `D' = D kbar`, `eps = epsbar`; strong part `K' = D m_bound kbar`,
/// `b = lambda_bar`, `gamma = epsbar`. The result is verified in the space
/// norm on the sampled grid.
#[allow(clippy::too_many_arguments)]
pub fn extract_munu(
    sys: &Nrds,
    cert_mu: &DichotomyCertificate,
    mu: &GrowthRate,
    nu: &GrowthRate,
    k_bar: f64,
    eps_bar: f64,
    m_bound: f64,
    lambda_bar: f64,
    points: &[OrbitPoint],
    horizon: usize,
    seed: u64,
) -> Result<MuNuCertificate> {
    // Sandwich validation in the certificate's norm.
    let probes = probe_vectors(sys.dim(), seed);
    for p in points {
        let ell = p.ell as usize;
        let pen = k_bar * nu.ratio_pow(0, ell, eps_bar) * nu.value(0).powf(eps_bar);
        for v in &probes {
            let a = cert_mu.norm.eval(p, v);
            let lo = v.norm();
            if tol::rel_margin(lo, a) < -tol::REL_SLACK
                || tol::rel_margin(a, pen * lo) < -tol::REL_SLACK
            {
                return Err(LabError::SandwichViolated(format!(
                    "|v| = {lo:.6e}, |v|_p = {a:.6e}, bound = {:.6e} at ell = {ell}",
                    pen * lo
                )));
            }
        }
    }

    let mut lambda_table = std::collections::BTreeMap::new();
    let mut d_table = std::collections::BTreeMap::new();
    let mut k_table = std::collections::BTreeMap::new();
    let mut b_table = std::collections::BTreeMap::new();
    for p in points {
        let key = p.class_key();
        lambda_table.insert(key.clone(), cert_mu.lambda.eval(p)?);
        d_table.insert(key.clone(), cert_mu.big_d.eval(p)? * k_bar);
        k_table.insert(key.clone(), cert_mu.big_d.eval(p)? * m_bound * k_bar);
        b_table.insert(key, lambda_bar);
    }
    let out = MuNuCertificate {
        projections: cert_mu.projections.clone(),
        mu: mu.clone(),
        nu: nu.clone(),
        lambda: ClassFn::Table(std::sync::Arc::new(lambda_table)),
        big_d: ClassFn::Table(std::sync::Arc::new(d_table)),
        epsilon: ClassFn::Const(eps_bar),
        strong: Some(StrongBounds {
            big_k: ClassFn::Table(std::sync::Arc::new(k_table)),
            b: ClassFn::Table(std::sync::Arc::new(b_table)),
            gamma: ClassFn::Const(eps_bar),
        }),
    };
    let report = verify_munu(sys, &out, points, horizon, seed)?;
    if !report.pass {
        return Err(LabError::SandwichViolated(format!(
            "extracted bounds fail in the space norm (worst margin {:.3e})",
            report.worst_margin
        )));
    }
    Ok(out)
}

/// Round-trip summary: the constants of the final certificate relative to
/// the starting one.
#[derive(Clone, Debug, Serialize)]
pub struct RoundTrip {
    pub initial_d: f64,
    pub final_d: f64,
    pub initial_k: f64,
    pub final_k: f64,
    pub growth_factor: f64,
}
