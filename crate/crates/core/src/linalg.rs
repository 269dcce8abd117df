//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! All matrix norms are induced 2-norms computed from singular values.
//! Symmetric matrices are symmetrized as `(A + A^T) / 2` before any
//! eigen-decomposition so that round-off asymmetry never leaks into
//! eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative cutoff below which a singular value is treated as zero.
pub const RANK_RTOL: f64 = 1e-12;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Singular values, sorted descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Spectral norm `||A||_2`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest singular value among the `min(rows, cols)` singular values.
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Eigenvalues of the symmetric part of `a`, sorted ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.total_cmp(y));
    v
}

/// `(lambda_min, lambda_max)` of the symmetric part of `a`.
pub fn sym_extreme_eigenvalues(a: &DMatrix<f64>) -> (f64, f64) {
    let v = sym_eigenvalues(a);
    (v[0], v[v.len() - 1])
}

/// Numerical rank with the relative cutoff [`RANK_RTOL`].
pub fn rank(a: &DMatrix<f64>) -> usize {
    let s = singular_values(a);
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > RANK_RTOL * smax).count()
}

/// Moore-Penrose pseudoinverse via SVD, zeroing singular values below
/// `RANK_RTOL * sigma_max`. Returns the pseudoinverse and the numerical rank.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (rows, cols) = a.shape();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = RANK_RTOL * smax;
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut pinv = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            pinv += (vi * ui.transpose()) / s;
        }
    }
    (pinv, rank)
}

/// Condition number `sigma_max / sigma_min` (infinite when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// True when `a` is symmetric positive definite (Cholesky succeeds on the
/// symmetrized matrix).
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.is_square() && symmetrize(a).cholesky().is_some()
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).abs().max()
}

/// Stack `[[a, b], [b^T, c]]`.
pub fn block_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = c.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(b);
    k.view_mut((n, 0), (m, n)).copy_from(&b.transpose());
    k.view_mut((n, n), (m, m)).copy_from(c);
    k
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = dmatrix![3.0, 0.0; 0.0, -5.0];
        assert!((spectral_norm(&a) - 5.0).abs() < 1e-14);
        assert!((sigma_min(&a) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn pinv_of_rectangular_full_rank() {
        let a = dmatrix![1.0, 0.0; 0.0, 2.0; 0.0, 0.0];
        let (p, r) = pseudo_inverse(&a);
        assert_eq!(r, 2);
        let expect = dmatrix![1.0, 0.0, 0.0; 0.0, 0.5, 0.0];
        assert!((p - expect).abs().max() < 1e-15);
    }

    #[test]
    fn pinv_rank_deficient_is_min_norm() {
        let a = dmatrix![1.0, 1.0; 1.0, 1.0];
        let (p, r) = pseudo_inverse(&a);
        assert_eq!(r, 1);
        let expect = dmatrix![0.25, 0.25; 0.25, 0.25];
        assert!((p - expect).abs().max() < 1e-14);
    }

    #[test]
    fn block_matrix_layout() {
        let a = dmatrix![1.0];
        let b = dmatrix![2.0, 3.0];
        let c = dmatrix![4.0, 0.0; 0.0, 5.0];
        let k = block_matrix(&a, &b, &c);
        assert_eq!(k, dmatrix![1.0, 2.0, 3.0; 2.0, 4.0, 0.0; 3.0, 0.0, 5.0]);
    }

    #[test]
    fn definiteness() {
        assert!(is_positive_definite(&dmatrix![2.0, 1.0; 1.0, 2.0]));
        assert!(!is_positive_definite(&dmatrix![1.0, 2.0; 2.0, 1.0]));
    }
}
