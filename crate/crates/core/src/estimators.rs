//! Interpolation and ridge estimates of `C theta` and the three
//! information matrices `W_dagger`, `W_lambda` and `Omega_lambda`.

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};
use crate::features::PriorOperator;
use crate::functionals::{self, LinearFunctional, ProjectedData};
use crate::linalg;

/// Observed data together with the noise and prior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
    pub v0: PriorOperator,
    pub lam: Option<f64>,
    pub theta_true: Option<DVector<f64>>,
}

impl Dataset {
    /// Validates shapes, `sigma > 0`, `lam > 0` and, when given, the norm
    /// bound `theta^T V0 theta <= 1 / lam`.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        sigma: f64,
        v0: PriorOperator,
        lam: Option<f64>,
        theta_true: Option<DVector<f64>>,
    ) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(OedError::Dimension(format!("{} responses for {} rows", y.len(), x.nrows())));
        }
        if v0.dim() != x.ncols() {
            return Err(OedError::Dimension("prior and design disagree on m".into()));
        }
        if !(sigma > 0.0) {
            return Err(OedError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if let Some(l) = lam {
            if !(l > 0.0) {
                return Err(OedError::InvalidArgument(format!("lambda must be positive, got {l}")));
            }
        }
        if let Some(t) = &theta_true {
            if t.len() != x.ncols() {
                return Err(OedError::Dimension("theta has the wrong length".into()));
            }
            if let Some(l) = lam {
                let nsq = v0.norm_sq(t);
                if nsq > 1.0 / l + 1e-9 {
                    return Err(OedError::InvalidArgument(format!(
                        "theta^T V0 theta = {nsq:.6} exceeds 1/lambda = {:.6}",
                        1.0 / l
                    )));
                }
            }
        }
        Ok(Dataset { x, y, sigma, v0, lam, theta_true })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Which estimator an information matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoKind {
    InterpDagger,
    RidgeLambda,
    AdaptiveOmega,
}

/// A symmetric `p x p` information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub matrix: DMatrix<f64>,
    pub kind: InfoKind,
}

impl InfoMatrix {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eig(&self) -> f64 {
        linalg::min_eig(&self.matrix)
    }
}

/// Averages the responses of bit-identical rows.
pub fn average_duplicates(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (xu, groups) = functionals::dedup_rows(x);
    let yu = DVector::from_iterator(groups.len(), groups.iter().map(|g| g.iter().map(|&i| y[i]).sum::<f64>() / g.len() as f64));
    (xu, yu)
}

/// Interpolation estimate `C V0^{-1} X^T K^{-1} y_bar`, with duplicate rows
/// merged and their responses averaged.
pub fn interpolate(ds: &Dataset, c: &LinearFunctional) -> Result<DVector<f64>> {
    if ds.n() == 0 {
        return Err(OedError::InvalidArgument("empty dataset".into()));
    }
    let (xu, yu) = average_duplicates(&ds.x, &ds.y);
    let l = functionals::interpolation_operator(c, &xu, &ds.v0)?;
    Ok(l * yu)
}

/// `C (X^T X + c V0)^{-1} C^T` in whitened coordinates, choosing the primal
/// or the kernel form by shape.
fn ridge_inner(ct: &DMatrix<f64>, xt: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let (n, m) = xt.shape();
    if n >= m {
        let a = xt.transpose() * xt + DMatrix::identity(m, m) * reg;
        linalg::symmetrize(&(ct * linalg::spd_solve(&a, &ct.transpose())))
    } else {
        let k = xt * xt.transpose() + DMatrix::identity(n, n) * reg;
        let q = xt * ct.transpose();
        let inner = ct * ct.transpose() - q.transpose() * linalg::spd_solve(&k, &q);
        linalg::symmetrize(&(inner / reg))
    }
}

/// Ridge estimator operator `L_lambda` in the original coordinates, so that
/// the estimate is `L_lambda y`.
pub fn ridge_operator(x: &DMatrix<f64>, c: &LinearFunctional, v0: &PriorOperator, lam: f64, sigma: f64) -> Result<DMatrix<f64>> {
    if c.m() != x.ncols() || v0.dim() != x.ncols() {
        return Err(OedError::Dimension("functional, design and prior disagree on m".into()));
    }
    let xt = v0.whiten(x);
    let ct = v0.whiten(c.matrix());
    let reg = lam * sigma * sigma;
    let (n, m) = xt.shape();
    Ok(if n >= m {
        let a = xt.transpose() * &xt + DMatrix::identity(m, m) * reg;
        (linalg::spd_solve(&a, &ct.transpose())).transpose() * xt.transpose()
    } else {
        let k = &xt * xt.transpose() + DMatrix::identity(n, n) * reg;
        (linalg::spd_solve(&k, &(&xt * ct.transpose()))).transpose()
    })
}

/// Ridge estimate `C (X^T X + lambda sigma^2 V0)^{-1} X^T y`.
pub fn ridge(ds: &Dataset, c: &LinearFunctional) -> Result<DVector<f64>> {
    let lam = ds.lam.ok_or_else(|| OedError::InvalidArgument("ridge estimate needs lambda".into()))?;
    if ds.n() == 0 {
        return Ok(DVector::zeros(c.p()));
    }
    Ok(ridge_operator(&ds.x, c, &ds.v0, lam, ds.sigma)? * &ds.y)
}

fn invert_covariance(cov: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (vals, _) = linalg::sym_eig(&cov);
    let top = vals.max();
    if !(top > 0.0) || vals.min() <= 1e-12 * top {
        return Err(OedError::NotIdentifiable(format!("{what}: covariance is singular")));
    }
    Ok(linalg::spd_inverse(&cov))
}

/// `W_dagger = (L L^T)^{-1}` for the interpolation operator on the
/// de-duplicated design.
pub fn info_matrix_interp(x: &DMatrix<f64>, c: &LinearFunctional, v0: &PriorOperator) -> Result<InfoMatrix> {
    let (xu, _) = functionals::dedup_rows(x);
    let l = functionals::interpolation_operator(c, &xu, v0)?;
    let w = invert_covariance(linalg::symmetrize(&(&l * l.transpose())), "interpolation")?;
    Ok(InfoMatrix { matrix: w, kind: InfoKind::InterpDagger })
}

/// `W_dagger` through the feature-space pseudo-inverse
/// `(C V0^{-1/2} (V0^{-1/2} X^T X V0^{-1/2})^+ V0^{-1/2} C^T)^{-1}`.
pub fn info_matrix_interp_featurized(x: &DMatrix<f64>, c: &LinearFunctional, v0: &PriorOperator) -> Result<InfoMatrix> {
    let xt = v0.whiten(x);
    let ct = v0.whiten(c.matrix());
    let g = linalg::pinv(&(xt.transpose() * &xt));
    let w = invert_covariance(linalg::symmetrize(&(&ct * g * ct.transpose())), "interpolation")?;
    Ok(InfoMatrix { matrix: w, kind: InfoKind::InterpDagger })
}

/// `W_lambda = sigma^{-2} (C (sigma^2 lambda V0 + X^T X)^{-1} C^T)^{-1}`.
pub fn info_matrix_ridge(x: &DMatrix<f64>, c: &LinearFunctional, v0: &PriorOperator, lam: f64, sigma: f64) -> Result<InfoMatrix> {
    if c.m() != x.ncols() || v0.dim() != x.ncols() {
        return Err(OedError::Dimension("functional, design and prior disagree on m".into()));
    }
    let inner = ridge_inner(&v0.whiten(c.matrix()), &v0.whiten(x), lam * sigma * sigma);
    let w = linalg::spd_inverse(&inner) / (sigma * sigma);
    Ok(InfoMatrix { matrix: linalg::symmetrize(&w), kind: InfoKind::RidgeLambda })
}

/// `Omega_lambda = Z^T Z / sigma^2 + lambda S`.
pub fn info_matrix_adaptive(pd: &ProjectedData, lam: f64, sigma: f64) -> InfoMatrix {
    let om = pd.z.transpose() * &pd.z / (sigma * sigma) + &pd.s * lam;
    InfoMatrix { matrix: linalg::symmetrize(&om), kind: InfoKind::AdaptiveOmega }
}

/// Estimator family used by design objectives and residual bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Interp,
    Ridge,
}

/// Checks that `eta` lies on the probability simplex.
pub fn check_simplex(eta: &DVector<f64>) -> Result<()> {
    if eta.iter().any(|v| !(v.is_finite()) || *v < 0.0) {
        return Err(OedError::InvalidArgument("allocation has negative or non-finite entries".into()));
    }
    let s = eta.sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(OedError::InvalidArgument(format!("allocation sums to {s}, not 1")));
    }
    Ok(())
}

/// Rows `sqrt(eta_i) x_i` for `eta_i > 0`, in whitened coordinates.
pub fn weighted_rows(xt: &DMatrix<f64>, eta: &DVector<f64>) -> DMatrix<f64> {
    let rows: Vec<_> = (0..xt.nrows()).filter(|&i| eta[i] > 0.0).map(|i| xt.row(i) * eta[i].sqrt()).collect();
    if rows.is_empty() {
        DMatrix::zeros(0, xt.ncols())
    } else {
        DMatrix::from_rows(&rows)
    }
}

/// Information matrix of the design `D(eta)^{1/2} X_S`.
///
/// For the interpolation kind only rows with positive weight enter, and the
/// pseudo-inverse of the weighted Gram matrix is used, so repeated rows and
/// collinear rows are handled consistently.
pub fn weighted_info_matrix(
    x_s: &DMatrix<f64>,
    eta: &DVector<f64>,
    c: &LinearFunctional,
    v0: &PriorOperator,
    kind: EstimatorKind,
    lam: f64,
    sigma: f64,
) -> Result<InfoMatrix> {
    if eta.len() != x_s.nrows() {
        return Err(OedError::Dimension("allocation length differs from support size".into()));
    }
    check_simplex(eta)?;
    let xt = v0.whiten(x_s);
    let ct = v0.whiten(c.matrix());
    let b = weighted_rows(&xt, eta);
    match kind {
        EstimatorKind::Interp => {
            let bp = linalg::pinv(&b);
            let l = &ct * bp;
            let w = invert_covariance(linalg::symmetrize(&(&l * l.transpose())), "weighted interpolation")?;
            Ok(InfoMatrix { matrix: w, kind: InfoKind::InterpDagger })
        }
        EstimatorKind::Ridge => {
            let inner = ridge_inner(&ct, &b, lam * sigma * sigma);
            Ok(InfoMatrix { matrix: linalg::symmetrize(&(linalg::spd_inverse(&inner) / (sigma * sigma))), kind: InfoKind::RidgeLambda })
        }
    }
}

/// Upper bound on the residual covariance `E[(C theta_hat - C theta)(...)^T]`
/// over all `theta` with `theta^T V0 theta <= 1/lambda`: variance term plus
/// worst-case bias term.
pub fn residual_covariance_bound(
    x: &DMatrix<f64>,
    c: &LinearFunctional,
    v0: &PriorOperator,
    lam: f64,
    sigma: f64,
    kind: EstimatorKind,
) -> Result<DMatrix<f64>> {
    let (variance, bias) = residual_terms(x, c, v0, lam, sigma, kind)?;
    Ok(variance + bias)
}

/// The variance and bias parts of [`residual_covariance_bound`].
pub fn residual_terms(
    x: &DMatrix<f64>,
    c: &LinearFunctional,
    v0: &PriorOperator,
    lam: f64,
    sigma: f64,
    kind: EstimatorKind,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (l, xb) = match kind {
        EstimatorKind::Interp => {
            let (xu, _) = functionals::dedup_rows(x);
            (functionals::interpolation_operator(c, &xu, v0)?, xu)
        }
        EstimatorKind::Ridge => (ridge_operator(x, c, v0, lam, sigma)?, x.clone()),
    };
    let b = v0.whiten(&(c.matrix() - &l * &xb));
    let variance = linalg::symmetrize(&(&l * l.transpose())) * (sigma * sigma);
    let bias = linalg::symmetrize(&(&b * b.transpose())) / lam;
    Ok((variance, bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eye_ds(y: Vec<f64>, lam: Option<f64>) -> Dataset {
        Dataset::new(DMatrix::identity(2, 2), DVector::from_vec(y), 1.0, PriorOperator::identity(2), lam, None).unwrap()
    }

    #[test]
    fn interpolate_identity_design() {
        let ds = eye_ds(vec![0.3, -1.2], None);
        let c = LinearFunctional::new(DMatrix::identity(2, 2), "I").unwrap();
        let est = interpolate(&ds, &c).unwrap();
        assert_abs_diff_eq!(est[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(est[1], -1.2, epsilon = 1e-14);
    }

    #[test]
    fn interpolate_averages_duplicates() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let ds = Dataset::new(x, DVector::from_vec(vec![1.0, 2.0, 3.0, 2.0]), 1.0, PriorOperator::identity(1), None, None).unwrap();
        let c = LinearFunctional::new(DMatrix::identity(1, 1), "I").unwrap();
        assert_abs_diff_eq!(interpolate(&ds, &c).unwrap()[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ridge_closed_form() {
        let ds = eye_ds(vec![2.0, 0.0], Some(1.0));
        let c = LinearFunctional::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), "e1").unwrap();
        assert_abs_diff_eq!(ridge(&ds, &c).unwrap()[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn ridge_zero_response_and_shrinkage() {
        let c = LinearFunctional::new(DMatrix::identity(2, 2), "I").unwrap();
        assert_eq!(ridge(&eye_ds(vec![0.0, 0.0], Some(1.0)), &c).unwrap().norm(), 0.0);
        let big = ridge(&eye_ds(vec![1.0, 1.0], Some(1e12)), &c).unwrap();
        assert!(big.norm() < 1e-11);
        assert!(ridge(&eye_ds(vec![1.0, 1.0], None), &c).is_err());
    }

    #[test]
    fn info_interp_trivial_cases() {
        let c = LinearFunctional::new(DMatrix::identity(3, 3), "I").unwrap();
        let w = info_matrix_interp(&DMatrix::identity(3, 3), &c, &PriorOperator::identity(3)).unwrap();
        assert!((w.matrix - DMatrix::identity(3, 3)).norm() < 1e-12);
        let w2 = info_matrix_interp(&(DMatrix::identity(3, 3) * 2.0), &c, &PriorOperator::identity(3)).unwrap();
        assert!((w2.matrix - DMatrix::identity(3, 3) * 4.0).norm() < 1e-12);
    }

    #[test]
    fn info_ridge_trivial_cases() {
        let c = LinearFunctional::new(DMatrix::identity(2, 2), "I").unwrap();
        let w = info_matrix_ridge(&DMatrix::zeros(0, 2), &c, &PriorOperator::identity(2), 0.7, 0.3).unwrap();
        assert!((w.matrix - DMatrix::identity(2, 2) * 0.7).norm() < 1e-12);
        let w = info_matrix_ridge(&DMatrix::identity(2, 2), &c, &PriorOperator::identity(2), 1.0, 1.0).unwrap();
        assert!((w.matrix - DMatrix::identity(2, 2) * 2.0).norm() < 1e-12);
    }

    #[test]
    fn adaptive_empty_is_prior() {
        let pd = ProjectedData { z: DMatrix::zeros(0, 2), j: DMatrix::zeros(0, 3), s: DMatrix::identity(2, 2) * 3.0 };
        let om = info_matrix_adaptive(&pd, 0.5, 1.0);
        assert!((om.matrix - DMatrix::identity(2, 2) * 1.5).norm() < 1e-15);
    }

    #[test]
    fn weighted_repetition_invariance() {
        let c = LinearFunctional::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), "c").unwrap();
        let row = DMatrix::from_row_slice(1, 2, &[0.3, 0.8]);
        let rep = DMatrix::from_row_slice(3, 2, &[0.3, 0.8, 0.3, 0.8, 0.3, 0.8]);
        let v0 = PriorOperator::identity(2);
        let single = weighted_info_matrix(&row, &DVector::from_vec(vec![1.0]), &c, &v0, EstimatorKind::Interp, 1.0, 1.0).unwrap();
        let eta = DVector::from_element(3, 1.0 / 3.0);
        let many = weighted_info_matrix(&rep, &eta, &c, &v0, EstimatorKind::Interp, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(single.matrix[(0, 0)], many.matrix[(0, 0)], epsilon = 1e-10);
        let two = DMatrix::from_row_slice(2, 2, &[0.3, 0.8, -1.0, 0.2]);
        let ind = weighted_info_matrix(&two, &DVector::from_vec(vec![1.0, 0.0]), &c, &v0, EstimatorKind::Interp, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(single.matrix[(0, 0)], ind.matrix[(0, 0)], epsilon = 1e-10);
        assert!(weighted_info_matrix(&two, &DVector::from_vec(vec![0.7, 0.2]), &c, &v0, EstimatorKind::Interp, 1.0, 1.0).is_err());
    }

    #[test]
    fn residual_bound_estimable_has_no_bias() {
        let c = LinearFunctional::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), "c").unwrap();
        let (_, bias) = residual_terms(&DMatrix::identity(2, 2), &c, &PriorOperator::identity(2), 1.0, 0.1, EstimatorKind::Interp).unwrap();
        assert!(linalg::max_eig(&bias) <= 1e-8);
        let (var, _) = residual_terms(&DMatrix::identity(2, 2), &c, &PriorOperator::identity(2), 1.0, 0.0, EstimatorKind::Interp).unwrap();
        assert_eq!(var.norm(), 0.0);
    }
}
