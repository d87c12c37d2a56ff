//! Fixed-design and adaptive confidence ellipsoids for `C theta` and the
//! error certificates derived from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};
use crate::estimators::{self, InfoKind, InfoMatrix};
use crate::functionals::ProjectedData;
use crate::linalg;

/// Chi-squared tail quantity `xi(delta, p) = p + 2 sqrt(p ln(1/delta))`.
pub fn xi(delta: f64, p: usize) -> Result<f64> {
    check_delta(delta)?;
    let p = p as f64;
    Ok(p + 2.0 * (p * (1.0 / delta).ln()).sqrt())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(OedError::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Which construction produced an ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipsoidKind {
    FixedInterp,
    FixedRidge,
    Adaptive,
    ProjectedBiased,
}

/// The set `{v : |v - center|_M <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid {
    pub center: DVector<f64>,
    pub metric: InfoMatrix,
    pub radius: f64,
    pub delta: f64,
    pub kind: EllipsoidKind,
}

impl ConfidenceEllipsoid {
    /// `|v - center|_M`.
    pub fn deviation(&self, v: &DVector<f64>) -> f64 {
        let d = v - &self.center;
        d.dot(&(&self.metric.matrix * &d)).max(0.0).sqrt()
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.deviation(v) <= self.radius
    }

    /// The ellipsoid with the radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut e = self.clone();
        e.radius *= factor;
        e
    }
}

/// Radius `(sigma / sqrt(T)) sqrt(xi) + nu / sqrt(lambda)` with metric `W_dagger`.
pub fn fixed_interp_ellipsoid(
    estimate: DVector<f64>,
    w_dagger: &InfoMatrix,
    nu: f64,
    lam: f64,
    sigma: f64,
    reps: usize,
    delta: f64,
) -> Result<ConfidenceEllipsoid> {
    if nu < 0.0 {
        return Err(OedError::InvalidArgument(format!("relative bias must be non-negative, got {nu}")));
    }
    if w_dagger.kind != InfoKind::InterpDagger {
        return Err(OedError::InvalidArgument("fixed interpolation set needs a W_dagger metric".into()));
    }
    if reps == 0 {
        return Err(OedError::InvalidArgument("repetitions must be at least one".into()));
    }
    let x = xi(delta, w_dagger.p())?;
    let radius = sigma / (reps as f64).sqrt() * x.sqrt() + nu / lam.sqrt();
    Ok(ConfidenceEllipsoid { center: estimate, metric: w_dagger.clone(), radius, delta, kind: EllipsoidKind::FixedInterp })
}

/// Radius `sqrt(xi) + 1` with metric `W_lambda`.
pub fn fixed_ridge_ellipsoid(estimate: DVector<f64>, w_lambda: &InfoMatrix, delta: f64) -> Result<ConfidenceEllipsoid> {
    if w_lambda.kind != InfoKind::RidgeLambda {
        return Err(OedError::InvalidArgument("fixed ridge set needs a W_lambda metric".into()));
    }
    let radius = xi(delta, w_lambda.p())?.sqrt() + 1.0;
    Ok(ConfidenceEllipsoid { center: estimate, metric: w_lambda.clone(), radius, delta, kind: EllipsoidKind::FixedRidge })
}

/// `sqrt(2 log((1/delta) det(Omega)^{1/2} / det(lambda S)^{1/2}))`, the
/// noise part of the adaptive radius.
pub fn adaptive_noise_radius(omega: &DMatrix<f64>, s: &DMatrix<f64>, lam: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let log_ratio = 0.5 * (linalg::logdet_spd(omega)? - linalg::logdet_spd(&(s * lam))?);
    if log_ratio < -1e-9 {
        return Err(OedError::Numerical(format!("determinant ratio below one (log {log_ratio:.3e})")));
    }
    Ok((2.0 * ((1.0 / delta).ln() + log_ratio.max(0.0))).sqrt())
}

/// Anytime-valid set: radius `adaptive_noise_radius + 1` with metric `Omega`.
pub fn adaptive_ellipsoid(estimate: DVector<f64>, omega: &InfoMatrix, s: &DMatrix<f64>, lam: f64, delta: f64) -> Result<ConfidenceEllipsoid> {
    let radius = adaptive_noise_radius(&omega.matrix, s, lam, delta)? + 1.0;
    Ok(ConfidenceEllipsoid { center: estimate, metric: omega.clone(), radius, delta, kind: EllipsoidKind::Adaptive })
}

/// Upper bound `sqrt(p log(t L^2 / (p lambda) + 1) + 2 log(1/delta))` on
/// the noise part of the adaptive radius after `t` queries with
/// `|z / sigma| <= L`.
pub fn adaptive_radius_closed_form(p: usize, t: usize, feature_bound: f64, lam: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let p = p as f64;
    Ok((p * (t as f64 * feature_bound * feature_bound / (p * lam) + 1.0).ln() + 2.0 * (1.0 / delta).ln()).sqrt())
}

/// Result of an l2 certificate; `restricted` is set when the metric had
/// non-positive eigenvalues and the bound covers the identifiable subspace
/// only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Bound {
    pub value: f64,
    pub restricted: bool,
}

/// `lambda_min(M)^{-1/2} * radius`.
///
/// With `allow_restricted`, a metric with zero eigenvalues yields the bound
/// on its positive eigenspace and the flag is raised; otherwise it is an
/// error.
pub fn l2_error_bound(e: &ConfidenceEllipsoid, allow_restricted: bool) -> Result<L2Bound> {
    let (vals, _) = linalg::sym_eig(&e.metric.matrix);
    let top = vals.max();
    let lo = vals.min();
    if lo > 1e-14 * top.abs().max(f64::MIN_POSITIVE) {
        return Ok(L2Bound { value: e.radius / lo.sqrt(), restricted: false });
    }
    if !allow_restricted {
        return Err(OedError::Singular("metric has a zero eigenvalue".into()));
    }
    let pos = vals.iter().copied().filter(|v| *v > 1e-14 * top).fold(f64::INFINITY, f64::min);
    if !pos.is_finite() {
        return Err(OedError::Singular("metric has no positive eigenvalue".into()));
    }
    Ok(L2Bound { value: e.radius / pos.sqrt(), restricted: true })
}

/// Regression on projected data only, `(Z^T Z / sigma^2 + lambda S)^{-1} Z^T y / sigma^2`,
/// with a radius that adds the accumulated residual bias
/// `theta_bound / sigma * sum_i |j_i|`.
pub fn projected_biased_adaptive(
    pd: &ProjectedData,
    y: &DVector<f64>,
    theta_bound: f64,
    lam: f64,
    sigma: f64,
    delta: f64,
) -> Result<(DVector<f64>, ConfidenceEllipsoid)> {
    if y.len() != pd.z.nrows() {
        return Err(OedError::Dimension("responses and projected data differ in length".into()));
    }
    let omega = estimators::info_matrix_adaptive(pd, lam, sigma);
    let rhs = pd.z.transpose() * y / (sigma * sigma);
    let est = linalg::spd_solve(&omega.matrix, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice())).column(0).into_owned();
    let bias: f64 = (0..pd.j.nrows()).map(|i| pd.j.row(i).norm()).sum::<f64>() * theta_bound / sigma;
    let radius = 1.0 + adaptive_noise_radius(&omega.matrix, &pd.s, lam, delta)? + bias;
    let e = ConfidenceEllipsoid { center: est.clone(), metric: omega, radius, delta, kind: EllipsoidKind::ProjectedBiased };
    Ok((est, e))
}

/// Extent of the ellipsoid along `u`:
/// `center . u -+ radius sqrt(u^T M^{-1} u)`.
pub fn interval(e: &ConfidenceEllipsoid, direction: &DVector<f64>) -> Result<(f64, f64)> {
    if direction.len() != e.center.len() {
        return Err(OedError::Dimension("direction has the wrong length".into()));
    }
    if direction.norm() == 0.0 {
        return Err(OedError::InvalidArgument("direction must be nonzero".into()));
    }
    let (vals, _) = linalg::sym_eig(&e.metric.matrix);
    if !(vals.min() > 0.0) {
        return Err(OedError::Singular("interval needs a positive-definite metric".into()));
    }
    let half = e.radius * linalg::inv_quad_form(&e.metric.matrix, direction).max(0.0).sqrt();
    let mid = e.center.dot(direction);
    Ok((mid - half, mid + half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn info(m: DMatrix<f64>, kind: InfoKind) -> InfoMatrix {
        InfoMatrix { matrix: m, kind }
    }

    #[test]
    fn xi_values() {
        assert_abs_diff_eq!(xi(0.05, 1).unwrap(), 4.461637, epsilon = 1e-6);
        assert_abs_diff_eq!(xi(0.1, 2).unwrap(), 6.291932, epsilon = 1e-6);
        assert_abs_diff_eq!(xi(0.1, 4).unwrap(), 10.0697, epsilon = 1e-4);
        assert_abs_diff_eq!(xi(1.0 - 1e-15, 3).unwrap(), 3.0, epsilon = 1e-6);
        assert!(xi(0.0, 1).is_err());
        assert!(xi(1.0, 1).is_err());
    }

    #[test]
    fn fixed_interp_radius_example() {
        let w = info(DMatrix::identity(2, 2), InfoKind::InterpDagger);
        let e = fixed_interp_ellipsoid(DVector::zeros(2), &w, 0.002, 1.0, 0.01, 16, 0.1).unwrap();
        assert_abs_diff_eq!(e.radius, 0.008270931, epsilon = 1e-9);
        let noiseless = fixed_interp_ellipsoid(DVector::zeros(2), &w, 0.3, 4.0, 0.0, 1, 0.1).unwrap();
        assert_abs_diff_eq!(noiseless.radius, 0.15, epsilon = 1e-15);
        let many = fixed_interp_ellipsoid(DVector::zeros(2), &w, 0.0, 1.0, 1.0, 1 << 40, 0.1).unwrap();
        assert!(many.radius < 1e-5);
        assert!(fixed_interp_ellipsoid(DVector::zeros(2), &w, -0.1, 1.0, 1.0, 1, 0.1).is_err());
    }

    #[test]
    fn fixed_ridge_radius_examples() {
        let w1 = info(DMatrix::identity(1, 1), InfoKind::RidgeLambda);
        assert_abs_diff_eq!(fixed_ridge_ellipsoid(DVector::zeros(1), &w1, 0.05).unwrap().radius, 3.112259, epsilon = 1e-6);
        let w2 = info(DMatrix::identity(2, 2), InfoKind::RidgeLambda);
        assert_abs_diff_eq!(fixed_ridge_ellipsoid(DVector::zeros(2), &w2, 0.1).unwrap().radius, 3.508372, epsilon = 1e-6);
        let a = fixed_ridge_ellipsoid(DVector::zeros(2), &w2, 0.01).unwrap().radius;
        let b = fixed_ridge_ellipsoid(DVector::zeros(2), &w2, 0.2).unwrap().radius;
        assert!(a > b);
    }

    #[test]
    fn adaptive_empty_radius() {
        let s = DMatrix::identity(2, 2);
        let om = info(&s * 0.5, InfoKind::AdaptiveOmega);
        let e = adaptive_ellipsoid(DVector::zeros(2), &om, &s, 0.5, 0.1).unwrap();
        assert_abs_diff_eq!(e.radius, 3.1460, epsilon = 1e-4);
    }

    #[test]
    fn closed_form_examples() {
        assert_abs_diff_eq!(adaptive_radius_closed_form(3, 0, 1.0, 1.0, 0.1).unwrap(), (2.0 * 10f64.ln()).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(adaptive_radius_closed_form(1, 100, 1.0, 1.0, 0.1).unwrap(), 3.036493, epsilon = 1e-6);
    }

    #[test]
    fn l2_bound_scaling() {
        let e = ConfidenceEllipsoid {
            center: DVector::zeros(2),
            metric: info(DMatrix::identity(2, 2), InfoKind::RidgeLambda),
            radius: 3.0,
            delta: 0.1,
            kind: EllipsoidKind::FixedRidge,
        };
        assert_abs_diff_eq!(l2_error_bound(&e, false).unwrap().value, 3.0, epsilon = 1e-14);
        let mut e4 = e.clone();
        e4.metric.matrix *= 4.0;
        assert_abs_diff_eq!(l2_error_bound(&e4, false).unwrap().value, 1.5, epsilon = 1e-14);
        let mut sing = e.clone();
        sing.metric.matrix[(1, 1)] = 0.0;
        assert!(l2_error_bound(&sing, false).is_err());
        let r = l2_error_bound(&sing, true).unwrap();
        assert!(r.restricted);
    }

    #[test]
    fn interval_unit_metric() {
        let e = ConfidenceEllipsoid {
            center: DVector::from_vec(vec![0.5, 2.0]),
            metric: info(DMatrix::identity(2, 2), InfoKind::RidgeLambda),
            radius: 1.0,
            delta: 0.1,
            kind: EllipsoidKind::FixedRidge,
        };
        let (lo, hi) = interval(&e, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(lo, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(hi, 1.5, epsilon = 1e-14);
        let (lo2, hi2) = interval(&e.scaled(2.0), &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(hi2 - lo2, 2.0 * (hi - lo), epsilon = 1e-14);
        assert!(interval(&e, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn biased_without_residual_matches_adaptive() {
        let pd = ProjectedData {
            z: DMatrix::from_row_slice(3, 1, &[1.0, -0.5, 2.0]),
            j: DMatrix::zeros(3, 2),
            s: DMatrix::identity(1, 1),
        };
        let y = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let (_, e) = projected_biased_adaptive(&pd, &y, 1.0, 1.0, 1.0, 0.1).unwrap();
        let om = estimators::info_matrix_adaptive(&pd, 1.0, 1.0);
        let a = adaptive_ellipsoid(DVector::zeros(1), &om, &pd.s, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(e.radius, a.radius, epsilon = 1e-14);
    }
}
