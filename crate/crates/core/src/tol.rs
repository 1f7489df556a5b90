//! Pinned numerical tolerances.
//!
//! Every inequality in this crate is exact in real arithmetic; tolerance only
//! absorbs floating-point round-off and declared truncation. All values are
//! fixed here rather than scattered through call sites.

/// Relative slack for inequality checks that are exact in the reals.
/// Scaled by the largest magnitude among the compared quantities.
pub const REL_SLACK: f64 = 1e-12;

/// Residual of a projection identity P^2 = P.
pub const PROJECTION_RESIDUAL: f64 = 1e-12;

/// Relative residual for the cocycle property on tested splits.
pub const COCYCLE_RESIDUAL: f64 = 1e-10;

/// Relative residual for Phi(n) composed with its kernel inverse against Q.
pub const KERNEL_INVERSE_RESIDUAL: f64 = 1e-9;

/// Relative residual for projection equivariance along the cocycle.
pub const EQUIVARIANCE_RESIDUAL: f64 = 1e-10;

/// Subspace invariance residual for identified splittings.
pub const SPLITTING_RESIDUAL: f64 = 1e-8;

/// Principal-angle tolerance when a splitting is compared to a known one.
pub const PRINCIPAL_ANGLE: f64 = 1e-8;

/// Membership residual for "vector lies in ker Pi" checks.
pub const KER_MEMBERSHIP: f64 = 1e-10;

/// Per-cell recurrence residual of the admissibility solver, as a factor of
/// the input sup-norm.
pub const RECURRENCE_RESIDUAL_FACTOR: f64 = 1e-9;

/// Relative tolerance for linearity of the solution operator.
pub const LINEARITY: f64 = 1e-10;

/// Relative tolerance for forward-iteration oracle cross-checks.
pub const ORACLE_MATCH: f64 = 1e-8;

/// Default truncation target for the unstable series tail, relative to the
/// input sup-norm.
pub const TAIL_EPS: f64 = 1e-10;

/// Maximum number of unstable series terms before truncation is reported as
/// an error instead of silent slowness.
pub const J_MAX: usize = 100_000;

/// Rank tolerance factor for kernel/range bases (scaled by the largest
/// singular value of the projection).
pub const RANK_TOL: f64 = 1e-12;

/// Factor for declaring the kernel restriction numerically singular (scaled
/// by its largest singular value).
pub const INVERTIBILITY_TOL: f64 = 1e-10;

/// Mu-normalized exponent below which a direction counts as stable.
pub const GROWTH_THRESHOLD: f64 = 0.1;

/// Half-width of the ambiguous band around exponent zero.
pub const GAP_TOL: f64 = 0.02;

/// Default minimum mu-ratio the splitting horizon must reach.
pub const SPLIT_RATIO_MIN: f64 = 1e3;

/// Exponent grid for certificate fitting: geometric from 2^-10 to 2^10.
pub const FIT_GRID_LO_EXP: f64 = -10.0;
pub const FIT_GRID_HI_EXP: f64 = 10.0;
pub const FIT_GRID_POINTS: usize = 41;

/// Fixed-point iteration defaults.
pub const FP_TOL_FACTOR: f64 = 1e-10;
pub const MAX_ITER: usize = 200;

/// Default probe window used to certify eta on custom rates.
pub const ETA_PROBE_WINDOW: usize = 100_000;

/// Cap on the stabilization horizon of adapted-norm sups.
pub const ADAPTED_HORIZON_CAP: usize = 10_000;

/// Tail-domination factor for choosing the adapted-norm horizon.
pub const ADAPTED_TAIL_DROP: f64 = 1e-10;

/// Number of seeded random unit vectors added to basis probes in
/// operator-norm style checks.
pub const NORM_PROBES: usize = 8;

/// Default byte budget for the cocycle product cache.
pub const CACHE_BYTES_DEFAULT: usize = 256 * 1024 * 1024;

/// Relative tolerance for the perturbation scaling equation.
pub const PERTURB_SCALE_TOL: f64 = 1e-12;

/// Slack factor allowed on observed contraction rates versus rho * |T|.
pub const CONTRACTION_SLACK: f64 = 0.1;

/// Amplification cap selecting the window for forward-iteration oracles.
/// Beyond this mu-ratio^lambda the comparison is dominated by round-off
/// amplified along unstable directions.
pub const ORACLE_AMPLIFICATION_CAP: f64 = 1e3;

/// Returns true when `lo <= mid <= hi` up to [`REL_SLACK`] scaled by the
/// largest magnitude among the three.
pub fn sandwiched(lo: f64, mid: f64, hi: f64) -> bool {
    let scale = lo.abs().max(mid.abs()).max(hi.abs()).max(1e-300);
    lo - mid <= REL_SLACK * scale && mid - hi <= REL_SLACK * scale
}

/// Relative margin of `lhs <= rhs`, normalized by the larger magnitude.
/// Nonnegative (up to [`REL_SLACK`]) means the inequality holds.
pub fn rel_margin(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    (rhs - lhs) / scale
}

/// Pass/fail for `lhs <= rhs` with the crate-wide relative slack.
pub fn leq(lhs: f64, rhs: f64) -> bool {
    rel_margin(lhs, rhs) >= -REL_SLACK
}
