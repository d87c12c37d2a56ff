//! Dense linear-algebra helpers on top of `nalgebra`.
//!
//! Every pseudo-inverse in the crate goes through [`pinv`] so that a single
//! relative singular-value cutoff is used everywhere.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{OedError, Result};

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RCOND: f64 = 1e-12;

/// Condition number above which solves emit a warning.
pub const COND_WARN: f64 = 1e12;

/// Moore–Penrose pseudo-inverse via SVD, dropping singular values below
/// `PINV_RCOND * sigma_max`.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_with_rank(a).0
}

/// Pseudo-inverse together with the numerical rank that was retained.
pub fn pinv_with_rank(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return (DMatrix::zeros(c, r), 0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cut = PINV_RCOND * smax;
    let mut out = DMatrix::zeros(c, r);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out += (vk / s) * uk.transpose();
        }
    }
    (out, rank)
}

/// Singular values sorted in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Symmetric part `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending
/// order and matching eigenvector columns.
pub fn sym_eig(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(a: &DMatrix<f64>) -> f64 {
    sym_eig(a).0.min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig(a: &DMatrix<f64>) -> f64 {
    sym_eig(a).0.max()
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(a);
    let d = DMatrix::from_diagonal(&vals.map(f));
    &vecs * d * vecs.transpose()
}

/// Square root of a positive semi-definite matrix; negative round-off
/// eigenvalues are clamped to zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(a, |v| v.max(0.0).sqrt())
}

/// Inverse square root of a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, _) = sym_eig(a);
    if vals.len() > 0 && vals.min() <= 0.0 {
        return Err(OedError::Singular("inverse square root of a non-positive-definite matrix".into()));
    }
    Ok(sym_fn(a, |v| 1.0 / v.sqrt()))
}

fn cholesky_cond_estimate(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let l = ch.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
    let mx = diag.iter().cloned().fold(0.0, f64::max);
    let mn = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if mn == 0.0 {
        f64::INFINITY
    } else {
        (mx / mn).powi(2)
    }
}

/// Solves `A X = B` for symmetric positive-definite `A`.
///
/// Uses Cholesky and falls back to the SVD pseudo-inverse when the
/// factorization fails. Ill-conditioning is reported through the `log`
/// warning channel and is not an error.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(a);
    match Cholesky::new(sym.clone()) {
        Some(ch) => {
            let cond = cholesky_cond_estimate(&ch);
            if cond > COND_WARN {
                log::warn!("solve with condition number estimate {cond:.3e}");
            }
            ch.solve(b)
        }
        None => {
            log::warn!("Cholesky failed on a {}x{} system, using SVD", a.nrows(), a.ncols());
            pinv(&sym) * b
        }
    }
}

/// Inverse of a symmetric positive-definite matrix (Cholesky, SVD fallback).
pub fn spd_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&spd_solve(a, &DMatrix::identity(a.nrows(), a.nrows())))
}

/// Inverse through Cholesky only; `None` when the matrix is not positive
/// definite.
pub fn spd_inverse_checked(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(symmetrize(a)).map(|ch| symmetrize(&ch.inverse()))
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
pub fn logdet_spd(a: &DMatrix<f64>) -> Result<f64> {
    let ch = Cholesky::new(symmetrize(a))
        .ok_or_else(|| OedError::Singular("log-determinant of a non-positive-definite matrix".into()))?;
    let l = ch.l_dirty();
    Ok((0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

/// Quadratic form `u^T A^{-1} u` for SPD `A`, computed by a solve.
pub fn inv_quad_form(a: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let b = DMatrix::from_column_slice(u.len(), 1, u.as_slice());
    let x = spd_solve(a, &b);
    u.dot(&x.column(0))
}

/// Frobenius norm.
pub fn fro(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// Nodes and weights of the symmetric tridiagonal Golub–Welsch problem.
///
/// `off` holds the off-diagonal entries, `mass` the total weight of the
/// underlying measure. Nodes are returned in ascending order.
pub fn golub_welsch(diag: &[f64], off: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let (vals, vecs) = sym_eig(&j);
    let nodes: Vec<f64> = vals.iter().copied().collect();
    let weights: Vec<f64> = (0..n).map(|k| mass * vecs[(0, k)].powi(2)).collect();
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, r) = pinv_with_rank(&a);
        assert_eq!(r, 1);
        assert_abs_diff_eq!(p[(0, 0)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn pinv_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let p = pinv(&a);
        assert_abs_diff_eq!((&a * &p)[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn logdet_diag() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_abs_diff_eq!(logdet_spd(&a).unwrap(), 6f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn eig_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let (v, _) = sym_eig(&a);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 3.0);
    }

    #[test]
    fn gauss_hermite_two_nodes() {
        let (x, w) = golub_welsch(&[0.0, 0.0], &[0.5f64.sqrt()], std::f64::consts::PI.sqrt());
        assert_abs_diff_eq!(x[1], 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-14);
    }
}
