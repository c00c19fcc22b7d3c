//! Dense linear-algebra helpers the filter needs beyond what nalgebra
//! exposes directly: a full (not thin) Householder QR, left-nullspace
//! bases, and chi-square quantiles for innovation gating.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Full Householder QR: returns `(Q, R)` with `Q` square `m×m`
/// orthogonal and `R` upper-trapezoidal `m×n`.
pub fn full_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let n = a.ncols();
    let mut r = a.clone();
    let mut q = DMatrix::<f64>::identity(m, m);
    for k in 0..n.min(m.saturating_sub(1)) {
        // Householder vector for column k below the diagonal.
        let x_norm = {
            let col = r.view((k, k), (m - k, 1));
            col.norm()
        };
        if x_norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] >= 0.0 { -x_norm } else { x_norm };
        let mut v = DMatrix::<f64>::zeros(m - k, 1);
        for i in 0..(m - k) {
            v[(i, 0)] = r[(k + i, k)];
        }
        v[(0, 0)] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 < 1e-300 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // R <- (I - beta v vᵀ) R on the trailing block.
        let vt_r = v.transpose() * r.view((k, 0), (m - k, n));
        let update = &v * vt_r * beta;
        for i in 0..(m - k) {
            for j in 0..n {
                r[(k + i, j)] -= update[(i, j)];
            }
        }
        // Q <- Q (I - beta v vᵀ) on the trailing columns.
        let q_v = q.view((0, k), (m, m - k)) * &v;
        let update_q = q_v * v.transpose() * beta;
        for i in 0..m {
            for j in 0..(m - k) {
                q[(i, k + j)] -= update_q[(i, j)];
            }
        }
    }
    (q, r)
}

/// Orthonormal basis of the left nullspace of `a` (`m×n`, `m > rank`):
/// the trailing `m - rank` columns of the full QR's `Q`.
///
/// `rank` is taken as the column count (callers pass full-column-rank
/// matrices such as the 3-column feature Jacobian).
pub fn left_nullspace(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (q, _) = full_qr(a);
    let n = a.ncols();
    let m = a.nrows();
    q.columns(n, m - n).into_owned()
}

/// Splits the full QR of `a` into `(Q1, Q2, R1)` where `Q1` spans the
/// column space (first `n` columns), `Q2` the left nullspace, and `R1`
/// is the square upper-triangular top block.
pub fn qr_split(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (q, r) = full_qr(a);
    let m = a.nrows();
    let n = a.ncols();
    let q1 = q.columns(0, n).into_owned();
    let q2 = q.columns(n, m - n).into_owned();
    let r1 = r.view((0, 0), (n, n)).into_owned();
    (q1, q2, r1)
}

/// Forces exact symmetry; applied after every covariance update.
pub fn symmetrize(p: &mut DMatrix<f64>) {
    let pt = p.transpose();
    *p += pt;
    *p *= 0.5;
}

/// 95% chi-square quantile for `dof` degrees of freedom.
pub fn chi2_gate_95(dof: usize) -> f64 {
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.95)
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn qr_reconstructs_and_q_orthogonal() {
        let a = random_matrix(12, 5, 3);
        let (q, r) = full_qr(&a);
        assert!((&q * &r - &a).norm() < 1e-12);
        assert!((q.transpose() * &q - DMatrix::identity(12, 12)).norm() < 1e-12);
    }

    #[test]
    fn left_nullspace_annihilates() {
        let a = random_matrix(10, 3, 5);
        let q2 = left_nullspace(&a);
        assert_eq!(q2.ncols(), 7);
        assert!((q2.transpose() * &a).norm() < 1e-12);
    }

    #[test]
    fn chi2_quantile_matches_table() {
        // Classic table values.
        assert!((chi2_gate_95(2) - 5.991).abs() < 1e-2);
        assert!((chi2_gate_95(3) - 7.815).abs() < 1e-2);
    }
}
