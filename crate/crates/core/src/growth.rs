//! Growth-rate sequences and their summation estimates.
//!
//! A growth rate is a strictly increasing, divergent, positive sequence
//! `mu_n` whose step ratio is bounded: `mu_{n+1} <= eta * mu_n`. The derived
//! quantities `mu'_n = mu_{n+1} - mu_n` and `phi_n = mu_n / mu'_n` drive all
//! weighted estimates in the crate.
//!
//! For exponential rates the raw values overflow f64 long before the index
//! grids used here are exhausted, so every estimate is carried in the log
//! domain alongside the plain values; inequality checks fall back to log
//! comparison whenever a plain value is not finite.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::tol;

#[derive(Clone, Debug, PartialEq)]
pub enum RateKind {
    Exponential { base: f64 },
    Polynomial { degree: u32 },
    Logarithmic,
    Custom { values: Arc<Vec<f64>> },
}

impl RateKind {
    pub fn label(&self) -> &'static str {
        match self {
            RateKind::Exponential { .. } => "exponential",
            RateKind::Polynomial { .. } => "polynomial",
            RateKind::Logarithmic => "logarithmic",
            RateKind::Custom { .. } => "custom",
        }
    }
}

/// A growth rate together with its certified distortion constant `eta`.
///
/// Preset kinds have closed-form `eta`; custom tables are probed over their
/// whole window at construction and rejected if monotonicity or distortion
/// fails anywhere.
#[derive(Clone, Debug)]
pub struct GrowthRate {
    kind: RateKind,
    eta: f64,
}

impl GrowthRate {
    /// `mu_n = base^n`, `eta = base`.
    pub fn exponential(base: f64) -> Result<Self> {
        if !(base > 1.0) || !base.is_finite() {
            return Err(LabError::InvalidRate(format!(
                "exponential base must be > 1, got {base}"
            )));
        }
        Ok(GrowthRate {
            kind: RateKind::Exponential { base },
            eta: base,
        })
    }

    /// `mu_n = (n+1)^degree`, `eta = 2^degree` (the ratio is largest at n=0).
    pub fn polynomial(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(LabError::InvalidRate(
                "polynomial degree must be >= 1".into(),
            ));
        }
        Ok(GrowthRate {
            kind: RateKind::Polynomial { degree },
            eta: 2f64.powi(degree as i32),
        })
    }

    /// `mu_n = log(n+2)`: the index shift keeps `mu_0 = log 2 > 0`.
    /// `eta = log 3 / log 2` (the ratio decreases in n).
    pub fn logarithmic() -> Self {
        GrowthRate {
            kind: RateKind::Logarithmic,
            eta: 3f64.ln() / 2f64.ln(),
        }
    }

    /// Table-backed rate. Validated over the entire table: positivity,
    /// strict monotonicity and bounded distortion. `eta` is the observed
    /// supremum of `mu_{n+1}/mu_n`, rounded up one ulp.
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(LabError::InvalidRate(
                "custom rate needs at least two values".into(),
            ));
        }
        if values[0] <= 0.0 {
            return Err(LabError::InvalidRate(format!(
                "mu_0 must be positive, got {}",
                values[0]
            )));
        }
        let mut eta: f64 = 1.0;
        for n in 0..values.len() - 1 {
            let (a, b) = (values[n], values[n + 1]);
            if !(b > a) {
                return Err(LabError::InvalidRate(format!(
                    "monotonicity fails at n={n}: mu_n={a}, mu_(n+1)={b}"
                )));
            }
            eta = eta.max(b / a);
        }
        if !eta.is_finite() {
            return Err(LabError::InvalidRate("distortion unbounded".into()));
        }
        Ok(GrowthRate {
            kind: RateKind::Custom {
                values: Arc::new(values),
            },
            eta: f64::from_bits(eta.to_bits() + 1),
        })
    }

    pub fn kind(&self) -> &RateKind {
        &self.kind
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `mu_n`. May overflow to infinity for exponential kinds; use
    /// [`GrowthRate::ln_value`] in estimates that must stay finite.
    pub fn value(&self, n: usize) -> f64 {
        match &self.kind {
            RateKind::Exponential { base } => base.powi(n as i32),
            RateKind::Polynomial { degree } => ((n + 1) as f64).powi(*degree as i32),
            RateKind::Logarithmic => ((n + 2) as f64).ln(),
            RateKind::Custom { values } => values[n],
        }
    }

    /// Checked table access; presets never fail.
    pub fn try_value(&self, n: usize) -> Result<f64> {
        if let RateKind::Custom { values } = &self.kind {
            if n >= values.len() {
                return Err(LabError::Domain(format!(
                    "custom rate evaluated at n={n} beyond its table of {}",
                    values.len()
                )));
            }
        }
        Ok(self.value(n))
    }

    /// `log mu_n`, exact for exponential kinds even where `value` overflows.
    pub fn ln_value(&self, n: usize) -> f64 {
        match &self.kind {
            RateKind::Exponential { base } => n as f64 * base.ln(),
            RateKind::Polynomial { degree } => *degree as f64 * ((n + 1) as f64).ln(),
            RateKind::Logarithmic => ((n + 2) as f64).ln().ln(),
            RateKind::Custom { values } => values[n].ln(),
        }
    }

    /// `mu'_n = mu_{n+1} - mu_n`.
    pub fn mu_prime(&self, n: usize) -> f64 {
        self.value(n + 1) - self.value(n)
    }

    /// `log mu'_n`, closed form for exponential kinds.
    pub fn ln_mu_prime(&self, n: usize) -> f64 {
        match &self.kind {
            RateKind::Exponential { base } => n as f64 * base.ln() + (base - 1.0).ln(),
            _ => self.mu_prime(n).ln(),
        }
    }

    /// `phi_n = mu_n / mu'_n`.
    pub fn phi(&self, n: usize) -> f64 {
        self.value(n) / self.mu_prime(n)
    }

    /// `mu_{l+n} / mu_l`.
    pub fn ratio(&self, ell: usize, n: usize) -> f64 {
        (self.ln_value(ell + n) - self.ln_value(ell)).exp()
    }

    /// `(mu_{l+n}/mu_l)^p` evaluated through logs so large exponential
    /// ratios keep full relative accuracy.
    pub fn ratio_pow(&self, ell: usize, n: usize, p: f64) -> f64 {
        (p * (self.ln_value(ell + n) - self.ln_value(ell))).exp()
    }
}

/// Factory matching the scenario-config surface.
pub fn make_rate(kind: &str, params: &[f64]) -> Result<GrowthRate> {
    match kind {
        "exponential" => {
            let base = params.first().copied().unwrap_or(std::f64::consts::E);
            GrowthRate::exponential(base)
        }
        "polynomial" => {
            let degree = params.first().copied().unwrap_or(1.0);
            if degree.fract() != 0.0 || degree < 1.0 {
                return Err(LabError::InvalidRate(format!(
                    "polynomial degree must be a positive integer, got {degree}"
                )));
            }
            GrowthRate::polynomial(degree as u32)
        }
        "logarithmic" => Ok(GrowthRate::logarithmic()),
        other => Err(LabError::InvalidRate(format!("unknown rate kind `{other}`"))),
    }
}

/// Result of the two-sided summation estimate.
///
/// `sum`, `lower`, `upper` are the plain values (possibly infinite); the
/// `ln_*` fields always carry their logarithms. `holds` is decided on the
/// plain values when all three are finite, otherwise in the log domain.
#[derive(Clone, Debug)]
pub struct LemmaSum {
    pub sum: f64,
    pub lower: f64,
    pub upper: f64,
    pub ln_sum: f64,
    pub ln_lower: f64,
    pub ln_upper: f64,
    pub holds: bool,
}

/// Neumaier-compensated sum; keeps the error of 1e4-term sums near one ulp,
/// which the 1e-12 relative slack requires.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for t in terms {
        let u = s + t;
        if s.abs() >= t.abs() {
            c += (s - u) + t;
        } else {
            c += (t - u) + s;
        }
        s = u;
    }
    s + c
}

/// `log(exp(a) - exp(b))` for `a > b`.
fn ln_diff_exp(a: f64, b: f64) -> f64 {
    a + (-(b - a).exp()).ln_1p()
}

/// Evaluates `sum_{k=s}^{r} mu_k^{-alpha} mu'_k` together with its two-sided
/// bound: `(mu_{r+1}^{1-alpha} - mu_s^{1-alpha})/(1-alpha)` and `eta^alpha`
/// times it (for `alpha = 1`, `log(mu_{r+1}/mu_s)` and `eta` times it).
pub fn lemma_sum(rate: &GrowthRate, alpha: f64, s: usize, r: usize) -> Result<LemmaSum> {
    if s <= 1 {
        return Err(LabError::Domain(format!("lemma_sum requires s > 1, got s={s}")));
    }
    if r < s {
        return Err(LabError::Domain(format!(
            "lemma_sum requires r >= s, got s={s}, r={r}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(LabError::Domain(format!(
            "lemma_sum requires alpha > 0, got {alpha}"
        )));
    }
    rate.try_value(r + 1)?;

    // Log-sum-exp for the series, anchored at the largest term.
    let ln_terms: Vec<f64> = (s..=r)
        .map(|k| rate.ln_mu_prime(k) - alpha * rate.ln_value(k))
        .collect();
    let m = ln_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_sum = m + compensated_sum(ln_terms.iter().map(|&t| (t - m).exp())).ln();
    let sum = if m.abs() < 700.0 {
        compensated_sum(ln_terms.iter().map(|&t| t.exp()))
    } else {
        ln_sum.exp()
    };

    let (ln_lower, lower) = if alpha == 1.0 {
        let v = rate.ln_value(r + 1) - rate.ln_value(s);
        (v.ln(), v)
    } else {
        let a = (1.0 - alpha) * rate.ln_value(r + 1);
        let b = (1.0 - alpha) * rate.ln_value(s);
        // Both orderings give a positive bound once divided by (1 - alpha).
        let ln_num = if a > b { ln_diff_exp(a, b) } else { ln_diff_exp(b, a) };
        let ln_v = ln_num - (1.0 - alpha).abs().ln();
        (ln_v, ln_v.exp())
    };
    let eta_pow = if alpha == 1.0 { rate.eta() } else { rate.eta().powf(alpha) };
    let ln_upper = ln_lower + eta_pow.ln();
    let upper = lower * eta_pow;

    let holds = if sum.is_finite() && lower.is_finite() && upper.is_finite() && sum > 0.0 {
        tol::sandwiched(lower, sum, upper)
    } else {
        ln_lower - ln_sum <= tol::REL_SLACK && ln_sum - ln_upper <= tol::REL_SLACK
    };

    Ok(LemmaSum {
        sum,
        lower,
        upper,
        ln_sum,
        ln_lower,
        ln_upper,
        holds,
    })
}

/// Witness of the minimal-growth condition: for every n there is an index
/// `q_n >= n+1` with `L1 <= mu_{q_n}/mu_n <= L2`.
#[derive(Clone, Debug)]
pub struct MinimalGrowthWitness {
    rate: GrowthRate,
    q: Vec<usize>,
    pub l1: f64,
    pub l2: f64,
    pub horizon: usize,
    search_bound: usize,
}

impl MinimalGrowthWitness {
    /// `q_n` for any n, recomputed lazily beyond the fitted horizon.
    pub fn q(&self, n: usize) -> Result<usize> {
        if n <= self.horizon {
            return Ok(self.q[n]);
        }
        find_q(&self.rate, self.l1, n, self.search_bound)
    }

    /// Step ratio at `q_n`; callers that walk beyond the fitted horizon must
    /// confirm it still sits inside `[L1, L2]`.
    pub fn ratio_at(&self, n: usize) -> Result<f64> {
        let q = self.q(n)?;
        Ok((self.rate.ln_value(q) - self.rate.ln_value(n)).exp())
    }

    pub fn rate(&self) -> &GrowthRate {
        &self.rate
    }
}

fn find_q(rate: &GrowthRate, target: f64, n: usize, search_bound: usize) -> Result<usize> {
    let ln_target = target.ln();
    let ln_n = rate.ln_value(n);
    let hit = |q: usize| -> Result<bool> {
        rate.try_value(q)?;
        Ok(rate.ln_value(q) - ln_n >= ln_target - 1e-15)
    };
    // Exponential probe then binary search; the ratio is monotone in q.
    let mut hi = n + 1;
    loop {
        if hit(hi)? {
            break;
        }
        if hi >= n + search_bound {
            return Err(LabError::HorizonExceeded(format!(
                "no q with mu_q/mu_{n} >= {target} within {search_bound} steps"
            )));
        }
        hi = (n + (hi - n) * 2).min(n + search_bound);
    }
    let mut lo = n + 1;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if hit(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// For each `n <= horizon` finds the smallest `q_n >= n+1` whose ratio meets
/// `target_ratio`, and records `L1 = target_ratio`, `L2 = sup` of the
/// observed ratios (finite by distortion: never exceeds `eta * target`).
pub fn find_minimal_growth(
    rate: &GrowthRate,
    target_ratio: f64,
    horizon: usize,
) -> Result<MinimalGrowthWitness> {
    find_minimal_growth_bounded(rate, target_ratio, horizon, 1_000_000)
}

pub fn find_minimal_growth_bounded(
    rate: &GrowthRate,
    target_ratio: f64,
    horizon: usize,
    search_bound: usize,
) -> Result<MinimalGrowthWitness> {
    if !(target_ratio > 1.0) {
        return Err(LabError::Domain(format!(
            "target ratio must exceed 1, got {target_ratio}"
        )));
    }
    let mut q = Vec::with_capacity(horizon + 1);
    let mut l2 = target_ratio;
    for n in 0..=horizon {
        let qn = find_q(rate, target_ratio, n, search_bound)?;
        l2 = l2.max((rate.ln_value(qn) - rate.ln_value(n)).exp());
        q.push(qn);
    }
    Ok(MinimalGrowthWitness {
        rate: rate.clone(),
        q,
        l1: target_ratio,
        l2,
        horizon,
        search_bound,
    })
}
