//! Small dense spectral helpers built on a one-sided Jacobi SVD.
//!
//! The matrices this crate decomposes are small (the state dimension) but
//! frequently rank-deficient or badly scaled: projections, their
//! complements, and long cocycle products with singular values spanning
//! many orders of magnitude. The general-purpose bidiagonal SVD shipped by
//! the matrix library loses several digits on exactly those inputs (one
//! observed case returned a largest singular value violating
//! `s1^2 + s2^2 = |A|_F^2` in the third decimal), so everything
//! rank-revealing here goes through cyclic one-sided Jacobi, which keeps
//! high relative accuracy for any dense input.

use nalgebra::{DMatrix, DVector};

pub struct Svd {
    /// Left singular vectors, `m x min(m,n)`; columns past the rank are zero.
    pub u: DMatrix<f64>,
    /// Singular values, descending; `min(m,n)` of them.
    pub sigma: Vec<f64>,
    /// Right singular vectors, `n x n`, orthogonal; columns past the rank
    /// span the null space.
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD for `m >= n`; callers with wide matrices transpose.
fn jacobi_tall(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let mut b = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let eps = 1e-15;

    for _sweep in 0..64 {
        let mut converged = true;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let bp = b.column(p).into_owned();
                let bq = b.column(q).into_owned();
                let alpha = bp.dot(&bp);
                let beta = bq.dot(&bq);
                let gamma = bp.dot(&bq);
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (b[(i, p)], b[(i, q)]);
                    b[(i, p)] = c * x - s * y;
                    b[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if converged {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        if s > 0.0 {
            u.set_column(dst, &(b.column(src) / s));
        }
        vs.set_column(dst, &v.column(src));
    }
    Svd { u, sigma, v: vs }
}

pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    if m >= n {
        jacobi_tall(a)
    } else {
        // A = U S V^T  <=>  A^T = V S U^T.
        let t = jacobi_tall(&a.transpose());
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: complete_orthonormal(&t.u, n),
        }
    }
}

/// Extends the nonzero columns of `basis` to a full orthonormal basis,
/// filling the zero slots and the remaining dimensions deterministically
/// from re-orthogonalized identity columns.
fn complete_orthonormal(basis: &DMatrix<f64>, want: usize) -> DMatrix<f64> {
    let dim = basis.nrows();
    debug_assert!(want <= dim);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(want);
    let mut filler = 0usize;
    let mut pending: Vec<usize> = Vec::new();
    for j in 0..basis.ncols().min(want) {
        let c = basis.column(j).into_owned();
        if c.norm() > 0.5 {
            cols.push(c);
        } else {
            pending.push(cols.len());
            cols.push(DVector::zeros(dim));
        }
    }
    while cols.len() < want {
        pending.push(cols.len());
        cols.push(DVector::zeros(dim));
    }
    for slot in pending {
        loop {
            assert!(filler < dim, "orthonormal completion exhausted");
            let mut v = DVector::from_fn(dim, |i, _| if i == filler { 1.0 } else { 0.0 });
            filler += 1;
            for _ in 0..2 {
                for c in cols.iter().filter(|c| c.norm() > 0.0) {
                    let proj = c.dot(&v);
                    v -= c * proj;
                }
            }
            let nrm = v.norm();
            if nrm > 1e-8 {
                cols[slot] = v / nrm;
                break;
            }
        }
    }
    DMatrix::from_columns(&cols)
}

/// Largest singular value (operator 2-norm); 0 for empty matrices.
pub fn op_norm2(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    svd(m).sigma[0]
}

/// (smallest, largest) singular value.
pub fn sigma_range(m: &DMatrix<f64>) -> (f64, f64) {
    let s = svd(m).sigma;
    (*s.last().unwrap(), s[0])
}

/// Orthonormal basis of the column span: left singular vectors with
/// singular value above the tolerance.
pub fn orthonormal_columns(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let dim = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(dim, 0);
    }
    let d = svd(m);
    let rank = d.sigma.iter().filter(|&&s| s > rank_tol).count();
    d.u.columns(0, rank).into_owned()
}

/// Orthonormal basis of the null space: right singular vectors with
/// singular value at most the tolerance.
pub fn null_space(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    let d = svd(m);
    let rank = d.sigma.iter().filter(|&&s| s > rank_tol).count();
    d.v.columns(rank, n - rank).into_owned()
}

/// Right singular vectors, descending by singular value.
pub fn right_singular_vectors(m: &DMatrix<f64>) -> DMatrix<f64> {
    svd(m).v
}

/// Sine of the largest principal angle between two orthonormal bases of
/// equal column count.
pub fn principal_angle_sin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    let residual = a - b * (b.transpose() * a);
    op_norm2(&residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.norm()
    }

    fn check_svd(a: &DMatrix<f64>, tol: f64) {
        let d = svd(a);
        assert_eq!(d.sigma.len(), a.nrows().min(a.ncols()));
        assert_eq!(d.v.shape(), (a.ncols(), a.ncols()));
        // Reconstruction.
        let k = d.sigma.len();
        let s = DMatrix::from_fn(k, k, |i, j| if i == j { d.sigma[i] } else { 0.0 });
        let rebuilt = &d.u * &s * d.v.columns(0, k).transpose();
        assert!(
            frob(&(a - &rebuilt)) <= tol * frob(a).max(1.0),
            "reconstruction off by {}",
            frob(&(a - rebuilt))
        );
        // Frobenius identity.
        let ss: f64 = d.sigma.iter().map(|s| s * s).sum();
        assert_relative_eq!(ss, frob(a).powi(2), max_relative = 1e-12);
        // Orthogonality of V.
        let vtv = d.v.transpose() * &d.v;
        assert!(frob(&(&vtv - DMatrix::identity(vtv.nrows(), vtv.ncols()))) <= 1e-12);
    }

    #[test]
    fn recovers_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.5]);
        let d = svd(&a);
        assert_relative_eq!(d.sigma[0], 3.0, max_relative = 1e-15);
        assert_relative_eq!(d.sigma[1], 0.5, max_relative = 1e-15);
        check_svd(&a, 1e-14);
    }

    #[test]
    fn handles_the_degenerate_projection_complement() {
        // The exact matrix on which the library SVD lost three digits.
        let p = DMatrix::from_column_slice(
            2,
            2,
            &[
                1.000033642506895,
                -0.008310586474848622,
                0.004048286942817853,
                -3.364250689501815e-5,
            ],
        );
        let q = DMatrix::identity(2, 2) - &p;
        let d = svd(&q);
        assert_relative_eq!(d.sigma[0], 1.0000763679600393, max_relative = 1e-12);
        assert!(d.sigma[1] <= 1e-15);
        // The dominant left vector spans range(Q) = ker(P).
        let u1 = d.u.column(0).into_owned();
        assert!((&p * &u1).norm() <= 1e-12);
        check_svd(&q, 1e-13);
    }

    #[test]
    fn wide_and_tall_shapes() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        check_svd(&a, 1e-13);
        let b = a.transpose();
        check_svd(&b, 1e-13);
        assert_relative_eq!(op_norm2(&a), op_norm2(&b), max_relative = 1e-13);
    }

    #[test]
    fn extreme_scaling() {
        let a = DMatrix::from_row_slice(2, 2, &[1e60, 0.0, 0.0, 1e-60]);
        let d = svd(&a);
        assert_relative_eq!(d.sigma[0], 1e60, max_relative = 1e-14);
        assert_relative_eq!(d.sigma[1], 1e-60, max_relative = 1e-14);
    }

    #[test]
    fn null_space_of_projection() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.0]);
        let ns = null_space(&p, 1e-12);
        assert_eq!(ns.ncols(), 1);
        assert!((&p * ns.column(0)).norm() <= 1e-14);
    }

    #[test]
    fn span_and_angles() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0]);
        let span = orthonormal_columns(&m, 1e-12);
        assert_eq!(span.ncols(), 1);
        let e = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 1.0]);
        let en = orthonormal_columns(&e, 1e-12);
        assert!(principal_angle_sin(&span, &en) <= 1e-14);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn random_matrices_decompose(rows in 1usize..5, cols in 1usize..5,
                                         seed in 0u64..10_000) {
                let mut s = seed;
                let mut next = || {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
                };
                let a = DMatrix::from_fn(rows, cols, |_, _| next());
                check_svd(&a, 1e-12);
            }
        }
    }
}
