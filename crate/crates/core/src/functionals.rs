//! Linear functionals `C` acting on feature coefficients, and the bias and
//! projection quantities that decide how well `C theta` can be estimated.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};
use crate::features::{FeatureMap, Kernel, PriorOperator};
use crate::linalg;

/// Relative singular-value threshold for the full-rank check on `C`.
pub const RANK_TOL: f64 = 1e-10;

/// Default relative threshold below which a singular value of a
/// discretized differential operator counts as zero.
pub const NULL_TOL: f64 = 1e-8;

/// A `p x m` matrix of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunctional {
    matrix: DMatrix<f64>,
    label: String,
}

impl LinearFunctional {
    /// Wraps a matrix after checking `sigma_p / sigma_1 > RANK_TOL`.
    pub fn new(matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let (p, m) = matrix.shape();
        if p == 0 || m == 0 {
            return Err(OedError::RankDeficient(format!("{label}: empty functional")));
        }
        if p > m {
            return Err(OedError::RankDeficient(format!("{label}: {p} rows exceed {m} columns")));
        }
        let s = linalg::singular_values(&matrix);
        if !(s[0] > 0.0) || s[p - 1] / s[0] <= RANK_TOL {
            return Err(OedError::RankDeficient(format!(
                "{label}: singular value ratio {:.3e}",
                if s[0] > 0.0 { s[p - 1] / s[0] } else { 0.0 }
            )));
        }
        Ok(LinearFunctional { matrix, label })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Output dimension `p`.
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// Coefficient dimension `m`.
    pub fn m(&self) -> usize {
        self.matrix.ncols()
    }

    /// `C theta`.
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * theta
    }
}

/// Row `j` is `Phi(target_j)^T`.
pub fn evaluation_functional(map: &FeatureMap, targets: &[Vec<f64>]) -> Result<LinearFunctional> {
    let c = crate::features::evaluate_design_matrix(map, targets)?;
    LinearFunctional::new(c, "evaluation").map_err(|e| match e {
        OedError::RankDeficient(msg) => OedError::RankDeficient(format!("{msg}; targets {targets:?}")),
        other => other,
    })
}

/// `C = grad_x Phi(x)`, a `d x m` functional returning the gradient.
pub fn gradient_functional(map: &FeatureMap, x: &[f64]) -> Result<LinearFunctional> {
    LinearFunctional::new(map.jacobian(x)?, format!("gradient at {x:?}"))
}

/// Quadrature rule with nodes and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Legendre rule with `n` nodes on `[a, b]`.
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Self {
        let diag = vec![0.0; n];
        let off: Vec<f64> = (1..n).map(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt()).collect();
        let (t, w) = linalg::golub_welsch(&diag, &off, 2.0);
        let half = 0.5 * (b - a);
        QuadratureRule {
            nodes: t.iter().map(|ti| vec![a + half * (ti + 1.0)]).collect(),
            weights: w.iter().map(|wi| wi * half).collect(),
        }
    }

    /// A single node with unit weight.
    pub fn point_mass(x0: Vec<f64>) -> Self {
        QuadratureRule { nodes: vec![x0], weights: vec![1.0] }
    }
}

/// `C = sum_k w_k q(t_k) Phi(t_k)^T`, approximating `int q(x) Phi(x)^T dx`.
pub fn integral_functional(map: &FeatureMap, density: &dyn Fn(&[f64]) -> f64, quad: &QuadratureRule) -> Result<LinearFunctional> {
    let mut row = DVector::zeros(map.dim());
    for (node, w) in quad.nodes.iter().zip(&quad.weights) {
        let q = density(node);
        if q != 0.0 {
            row += map.eval(node)? * (w * q);
        }
    }
    LinearFunctional::new(DMatrix::from_row_slice(1, row.len(), row.as_slice()), "integral")
}

/// Integral functional without the rank check, for quantities such as the
/// bias of a quadrature rule where an (almost) zero row is legitimate.
pub fn integral_row(map: &FeatureMap, density: &dyn Fn(&[f64]) -> f64, quad: &QuadratureRule) -> Result<DVector<f64>> {
    let mut row = DVector::zeros(map.dim());
    for (node, w) in quad.nodes.iter().zip(&quad.weights) {
        row += map.eval(node)? * (w * density(node));
    }
    Ok(row)
}

/// A linear differential operator discretized on a time grid.
///
/// `matrix` maps coefficients to residuals of the equation at the grid
/// points and `rhs` holds the forcing term. `values`, when present, maps
/// coefficients to the trajectory values on the grid and is used to measure
/// null-space candidates in function space rather than coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedOperator {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub values: Option<DMatrix<f64>>,
}

impl DiscretizedOperator {
    /// Homogeneous operator given by a bare matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let rhs = DVector::zeros(matrix.nrows());
        DiscretizedOperator { matrix, rhs, values: None }
    }

    /// Scalar equation `sum_k a_k(t) u^(k)(t) = s(t)` where
    /// `coeff(k, t)` returns `a_k(t)` for `k = 0..=order`.
    pub fn scalar_ode(
        map: &FeatureMap,
        grid: &[f64],
        order: u32,
        coeff: &dyn Fn(u32, f64) -> f64,
        forcing: &dyn Fn(f64) -> f64,
    ) -> Result<Self> {
        let m = map.dim();
        let mut t_mat = DMatrix::zeros(grid.len(), m);
        let mut vals = DMatrix::zeros(grid.len(), m);
        for (g, &t) in grid.iter().enumerate() {
            let mut row = DVector::zeros(m);
            for k in 0..=order {
                let a = coeff(k, t);
                let dk = map.derivative_1d(t, k)?;
                if k == 0 {
                    vals.set_row(g, &dk.transpose());
                }
                if a != 0.0 {
                    row += dk * a;
                }
            }
            t_mat.set_row(g, &row.transpose());
        }
        let rhs = DVector::from_iterator(grid.len(), grid.iter().map(|&t| forcing(t)));
        Ok(DiscretizedOperator { matrix: t_mat, rhs, values: Some(vals) })
    }

    /// First-order system `u'(t) = M(t) u(t)` with state dimension `s`.
    ///
    /// Coefficients are stacked per state component, `theta = (theta_1, ...,
    /// theta_s)`, so the operator acts on `R^{s m}`.
    pub fn linear_system(map: &FeatureMap, grid: &[f64], state_dim: usize, m_of_t: &dyn Fn(f64) -> DMatrix<f64>) -> Result<Self> {
        let m = map.dim();
        let s = state_dim;
        let mut t_mat = DMatrix::zeros(grid.len() * s, s * m);
        let mut vals = DMatrix::zeros(grid.len() * s, s * m);
        for (g, &t) in grid.iter().enumerate() {
            let phi = map.derivative_1d(t, 0)?;
            let dphi = map.derivative_1d(t, 1)?;
            let mt = m_of_t(t);
            if mt.shape() != (s, s) {
                return Err(OedError::Dimension("system matrix has the wrong shape".into()));
            }
            for r in 0..s {
                let row = g * s + r;
                for j in 0..m {
                    t_mat[(row, r * m + j)] += dphi[j];
                    vals[(row, r * m + j)] = phi[j];
                    for c in 0..s {
                        t_mat[(row, c * m + j)] -= mt[(r, c)] * phi[j];
                    }
                }
            }
        }
        Ok(DiscretizedOperator { matrix: t_mat, rhs: DVector::zeros(grid.len() * s), values: Some(vals) })
    }
}

/// How the numerical null space of a discretized operator is selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullSpaceRule {
    /// Singular values at most `tol * sigma_1`.
    Relative(f64),
    /// The `k` smallest singular values (the order of the equation is known).
    Order(usize),
}

impl Default for NullSpaceRule {
    fn default() -> Self {
        NullSpaceRule::Relative(NULL_TOL)
    }
}

/// Null-space functional of a discretized operator and a particular
/// solution `T^+ s`.
///
/// When the operator carries grid values, candidates are measured in
/// function space: coefficient directions whose trajectories vanish on the
/// grid are discarded first, since they solve every homogeneous equation
/// trivially.
pub fn ode_nullspace_functional(op: &DiscretizedOperator, rule: NullSpaceRule) -> Result<(LinearFunctional, DVector<f64>)> {
    let n = op.matrix.ncols();
    let basis = match &op.values {
        None => DMatrix::identity(n, n),
        Some(g) => {
            let svd = g.clone().svd(false, true);
            let vt = svd.v_t.expect("v_t requested");
            let s1 = svd.singular_values.max();
            let mut cols = Vec::new();
            for (k, &s) in svd.singular_values.iter().enumerate() {
                if s > 1e-10 * s1 {
                    cols.push(vt.row(k).transpose() / s);
                }
            }
            if cols.is_empty() {
                return Err(OedError::Singular("trajectory values vanish on the grid".into()));
            }
            DMatrix::from_columns(&cols)
        }
    };
    let tb = &op.matrix * &basis;
    let k = basis.ncols();
    let (sv, right) = if tb.nrows() == 0 {
        (vec![0.0; k], DMatrix::identity(k, k))
    } else {
        let svd = tb.clone().svd(false, true);
        let vt = svd.v_t.expect("v_t requested");
        let mut sv = vec![0.0; k];
        let mut right = DMatrix::zeros(k, k);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        for (pos, &i) in order.iter().enumerate() {
            sv[pos] = svd.singular_values[i];
            right.set_column(pos, &vt.row(i).transpose());
        }
        // Rows of T B fewer than its columns leave an exact null space that
        // the thin SVD does not return; complete it orthogonally.
        if order.len() < k {
            let filled = right.columns(0, order.len()).into_owned();
            let proj = DMatrix::identity(k, k) - &filled * filled.transpose();
            let comp = proj.svd(true, false);
            let u = comp.u.expect("u requested");
            let mut idx: Vec<usize> = (0..comp.singular_values.len()).collect();
            idx.sort_by(|&a, &b| comp.singular_values[b].partial_cmp(&comp.singular_values[a]).unwrap());
            for (pos, &i) in idx.iter().take(k - order.len()).enumerate() {
                right.set_column(order.len() + pos, &u.column(i));
            }
        }
        (sv, right)
    };
    let s1 = sv.iter().cloned().fold(0.0, f64::max);
    let null_idx: Vec<usize> = match rule {
        NullSpaceRule::Relative(tol) => (0..k).filter(|&i| sv[i] <= tol * s1).collect(),
        NullSpaceRule::Order(r) => {
            if r == 0 || r > k {
                return Err(OedError::InvalidArgument(format!("null-space order {r} out of range 1..={k}")));
            }
            (k - r..k).collect()
        }
    };
    if null_idx.is_empty() {
        return Err(OedError::RankDeficient(
            "empty numerical null space: the equation over-determines the space".into(),
        ));
    }
    let mut c = DMatrix::zeros(null_idx.len(), n);
    for (r, &i) in null_idx.iter().enumerate() {
        let v = &basis * right.column(i);
        let v = &v / v.norm();
        c.set_row(r, &v.transpose());
    }
    let particular = &basis * (linalg::pinv(&tb) * &op.rhs);
    Ok((LinearFunctional::new(c, "ode null space")?, particular))
}

/// Lyapunov decrease functional `vec(Sigma (x - x_ref) phi(x)^T)^T`.
///
/// Coefficients are `vec(A)` in column-major order for `A` of shape
/// `d x m`, so entry `(k, j)` of `A` sits at index `j d + k`.
pub fn lyapunov_functional(sigma: &DMatrix<f64>, x: &[f64], x_ref: &[f64], map: &FeatureMap) -> Result<LinearFunctional> {
    let d = x.len();
    if sigma.shape() != (d, d) || x_ref.len() != d {
        return Err(OedError::Dimension("Lyapunov matrix, state and reference must agree".into()));
    }
    let z = DVector::from_iterator(d, x.iter().zip(x_ref).map(|(a, b)| a - b));
    let sz = sigma * z;
    let phi = map.eval(x)?;
    let m = phi.len();
    let mut row = DMatrix::zeros(1, d * m);
    for j in 0..m {
        for k in 0..d {
            row[(0, j * d + k)] = sz[k] * phi[j];
        }
    }
    LinearFunctional::new(row, "lyapunov decrease")
}

/// Row-selector matrix keeping coordinates `keep` of `R^m`.
pub fn contamination_selector(keep: &[usize], m: usize) -> Result<LinearFunctional> {
    let mut c = DMatrix::zeros(keep.len(), m);
    for (r, &k) in keep.iter().enumerate() {
        if k >= m {
            return Err(OedError::InvalidArgument(format!("index {k} out of range for m = {m}")));
        }
        c[(r, k)] = 1.0;
    }
    LinearFunctional::new(c, "selector")
}

/// Groups bit-identical rows. Returns the unique rows (first occurrence
/// order) and, for each unique row, the indices of the original rows.
pub fn dedup_rows(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<Vec<usize>>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..x.nrows() {
        let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
        match seen.get(&key) {
            Some(&g) => groups[g].push(i),
            None => {
                seen.insert(key, groups.len());
                groups.push(vec![i]);
            }
        }
    }
    let rows: Vec<_> = groups.iter().map(|g| x.row(g[0]).into_owned()).collect();
    let unique = if rows.is_empty() { DMatrix::zeros(0, x.ncols()) } else { DMatrix::from_rows(&rows) };
    (unique, groups)
}

fn check_shapes(c: &LinearFunctional, x: &DMatrix<f64>, v0: &PriorOperator) -> Result<()> {
    if c.m() != x.ncols() || v0.dim() != x.ncols() {
        return Err(OedError::Dimension(format!(
            "functional has {} columns, design {}, prior {}",
            c.m(),
            x.ncols(),
            v0.dim()
        )));
    }
    Ok(())
}

/// Interpolation operator `L = C V0^{-1} X^T K^{-1}` on the given rows,
/// computed as `C V0^{-1/2} (X V0^{-1/2})^+` so that collinear rows are
/// handled by the pseudo-inverse.
pub fn interpolation_operator(c: &LinearFunctional, x: &DMatrix<f64>, v0: &PriorOperator) -> Result<DMatrix<f64>> {
    check_shapes(c, x, v0)?;
    if x.nrows() == 0 {
        return Err(OedError::InvalidArgument("design has no rows".into()));
    }
    let xt = v0.whiten(x);
    let ct = v0.whiten(c.matrix());
    let (xp, rank) = linalg::pinv_with_rank(&xt);
    if rank < xt.nrows() {
        log::warn!("kernel matrix is singular (rank {rank} of {}); using the pseudo-inverse", xt.nrows());
    }
    Ok(ct * xp)
}

/// Relative bias `nu = |(C - L X) V0^{-1/2}|_F / |L|_F` after removing
/// duplicate rows.
pub fn relative_bias(c: &LinearFunctional, x: &DMatrix<f64>, v0: &PriorOperator) -> Result<f64> {
    let (xu, _) = dedup_rows(x);
    let l = interpolation_operator(c, &xu, v0)?;
    let b = bias_operator(c, &xu, v0, &l);
    let ln = l.norm();
    if ln == 0.0 {
        return Err(OedError::NotIdentifiable("interpolation operator is zero".into()));
    }
    Ok(b.norm() / ln)
}

/// Whitened bias operator `(C - L X) V0^{-1/2}`.
pub fn bias_operator(c: &LinearFunctional, x: &DMatrix<f64>, v0: &PriorOperator, l: &DMatrix<f64>) -> DMatrix<f64> {
    v0.whiten(&(c.matrix() - l * x))
}

/// Maximum mean discrepancy between the weighted atoms `sum_i w_i delta(x_i)`
/// and the measure with density `q` discretized by `quad`.
pub fn mmd_bias(
    density: &dyn Fn(&[f64]) -> f64,
    quad: &QuadratureRule,
    nodes: &[Vec<f64>],
    weights: &[f64],
    kernel: &Kernel,
) -> Result<f64> {
    if nodes.len() != weights.len() {
        return Err(OedError::Dimension("nodes and weights differ in length".into()));
    }
    let qw: Vec<f64> = quad.nodes.iter().zip(&quad.weights).map(|(t, w)| w * density(t)).collect();
    let mut aa = 0.0;
    for (xi, wi) in nodes.iter().zip(weights) {
        for (xj, wj) in nodes.iter().zip(weights) {
            aa += wi * wj * kernel.eval(xi, xj);
        }
    }
    let mut ab = 0.0;
    for (xi, wi) in nodes.iter().zip(weights) {
        for (tk, qk) in quad.nodes.iter().zip(&qw) {
            ab += wi * qk * kernel.eval(xi, tk);
        }
    }
    let mut bb = 0.0;
    for (tk, qk) in quad.nodes.iter().zip(&qw) {
        for (tl, ql) in quad.nodes.iter().zip(&qw) {
            bb += qk * ql * kernel.eval(tk, tl);
        }
    }
    Ok((aa - 2.0 * ab + bb).max(0.0).sqrt())
}

/// Decomposition `X V0^{-1/2} = Z C V0^{-1/2} + J` with `J` orthogonal to
/// the rows of `C V0^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedData {
    pub z: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

/// Projects design rows onto the functional.
pub fn project_data(x: &DMatrix<f64>, c: &LinearFunctional, v0: &PriorOperator) -> Result<ProjectedData> {
    check_shapes(c, x, v0)?;
    let cv = c.matrix() * v0.inv() * c.matrix().transpose();
    let s = linalg::symmetrize(&crate::linalg::pinv(&cv));
    if linalg::min_eig(&cv) <= 0.0 {
        return Err(OedError::Singular("C V0^{-1} C^T is singular".into()));
    }
    let z = x * v0.inv() * c.matrix().transpose() * &s;
    let j = v0.whiten(x) - &z * v0.whiten(c.matrix());
    Ok(ProjectedData { z, j, s })
}

/// A finite family of functionals indexed by parameters `gamma`.
#[derive(Debug, Clone)]
pub struct FunctionalFamily {
    pub gamma_grid: Vec<Vec<f64>>,
    pub members: Vec<LinearFunctional>,
}

impl FunctionalFamily {
    /// Evaluates `generator` on every grid point.
    pub fn from_generator(gamma_grid: Vec<Vec<f64>>, generator: impl Fn(&[f64]) -> Result<LinearFunctional>) -> Result<Self> {
        if gamma_grid.is_empty() {
            return Err(OedError::InvalidArgument("parameter grid is empty".into()));
        }
        let members = gamma_grid.iter().map(|g| generator(g)).collect::<Result<Vec<_>>>()?;
        let m = members[0].m();
        if members.iter().any(|c| c.m() != m) {
            return Err(OedError::Dimension("family members act on different spaces".into()));
        }
        Ok(FunctionalFamily { gamma_grid, members })
    }

    /// A family with a single member.
    pub fn singleton(c: LinearFunctional) -> Self {
        FunctionalFamily { gamma_grid: vec![vec![]], members: vec![c] }
    }
}

/// Smallest eigenvalue of `(1 + delta/|X|_F) X^T X + delta^2 I - C^T (C (X^T X)^+ C^T)^{-1} C`
/// with `A = C X^+` the least-squares coefficients and
/// `delta = |C - A X|_F / |A|_F`. Non-negative values mean the Löwner
/// inequality holds on this instance.
pub fn least_squares_lowner_gap(x: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let m = x.ncols();
    if c.ncols() != m {
        return Err(OedError::Dimension("C and X differ in column count".into()));
    }
    let xp = linalg::pinv(x);
    let a = c * &xp;
    let an = a.norm();
    if an == 0.0 {
        return Err(OedError::NotIdentifiable("least-squares coefficients vanish".into()));
    }
    let delta = (c - &a * x).norm() / an;
    let xtx = x.transpose() * x;
    let vdag = &xp * xp.transpose();
    let inner = linalg::symmetrize(&(c * &vdag * c.transpose()));
    if linalg::min_eig(&inner) <= 0.0 {
        return Err(OedError::Singular("C (X^T X)^+ C^T is singular".into()));
    }
    let lhs = c.transpose() * linalg::spd_inverse(&inner) * c;
    let rhs = &xtx * (1.0 + delta / x.norm()) + DMatrix::identity(m, m) * (delta * delta);
    Ok(linalg::min_eig(&linalg::symmetrize(&(rhs - lhs))))
}

/// Returns `(|W^{1/2} (C - L X) V0^{-1/2}|_2, nu)` for the interpolation
/// operator of the design, with `W` its information matrix.
pub fn scaled_bias_and_nu(c: &LinearFunctional, x: &DMatrix<f64>, v0: &PriorOperator) -> Result<(f64, f64)> {
    let (xu, _) = dedup_rows(x);
    let l = interpolation_operator(c, &xu, v0)?;
    let b = bias_operator(c, &xu, v0, &l);
    let winv = linalg::symmetrize(&(&l * l.transpose()));
    if linalg::min_eig(&winv) <= 0.0 {
        return Err(OedError::NotIdentifiable("interpolation covariance is singular".into()));
    }
    let w_half = linalg::inv_sqrt_spd(&winv)?;
    let scaled = w_half * &b;
    let s = linalg::singular_values(&scaled);
    Ok((s.first().copied().unwrap_or(0.0), b.norm() / l.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn evaluation_linear_unit() {
        let map = FeatureMap::linear(2).unwrap();
        let c = evaluation_functional(&map, &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    }

    #[test]
    fn evaluation_duplicate_targets_rejected() {
        let map = FeatureMap::linear(2).unwrap();
        let err = evaluation_functional(&map, &[vec![1.0, 0.5], vec![1.0, 0.5]]).unwrap_err();
        assert!(matches!(err, OedError::RankDeficient(_)));
    }

    #[test]
    fn gradient_of_polynomial() {
        let map = FeatureMap::polynomial(1, 2).unwrap();
        let c = gradient_functional(&map, &[1.0]).unwrap();
        assert_eq!(c.matrix().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn gradient_of_linear_is_identity() {
        let map = FeatureMap::linear(3).unwrap();
        assert_eq!(gradient_functional(&map, &[0.1, 0.2, 0.3]).unwrap().matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn integral_point_mass() {
        let map = FeatureMap::polynomial(0, 2).unwrap();
        let c = integral_functional(&map, &|_| 1.0, &QuadratureRule::point_mass(vec![0.5])).unwrap();
        assert_eq!(c.matrix().as_slice(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn integral_odd_integrand_vanishes() {
        let map = FeatureMap::linear(1).unwrap();
        let row = integral_row(&map, &|_| 0.5, &QuadratureRule::gauss_legendre(16, -1.0, 1.0)).unwrap();
        assert!(row[0].abs() < 1e-14);
        assert!(integral_functional(&map, &|_| 0.0, &QuadratureRule::gauss_legendre(16, -1.0, 1.0)).is_err());
    }

    #[test]
    fn integral_moments() {
        let map = FeatureMap::polynomial(0, 2).unwrap();
        let c = integral_functional(&map, &|_| 1.0, &QuadratureRule::gauss_legendre(64, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(c.matrix()[(0, 0)], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.matrix()[(0, 1)], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(c.matrix()[(0, 2)], 1.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn nullspace_of_zero_operator() {
        let op = DiscretizedOperator::from_matrix(DMatrix::zeros(3, 2));
        let (c, _) = ode_nullspace_functional(&op, NullSpaceRule::default()).unwrap();
        assert_eq!(c.p(), 2);
    }

    #[test]
    fn nullspace_of_derivative_on_affine_features() {
        let map = FeatureMap::polynomial(0, 1).unwrap();
        let grid: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let op = DiscretizedOperator::scalar_ode(&map, &grid, 1, &|k, _| if k == 1 { 1.0 } else { 0.0 }, &|_| 0.0).unwrap();
        let (c, _) = ode_nullspace_functional(&op, NullSpaceRule::default()).unwrap();
        assert_eq!(c.p(), 1);
        assert_abs_diff_eq!(c.matrix()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.matrix()[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_unit_vectors() {
        let map = FeatureMap::linear(2).unwrap();
        let sigma = DMatrix::identity(2, 2);
        let c = lyapunov_functional(&sigma, &[1.0, 0.0], &[0.0, 0.0], &map).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 7.0, 11.0]);
        let vec_a = DVector::from_column_slice(a.as_slice());
        assert_abs_diff_eq!(c.apply(&vec_a)[0], 3.0, epsilon = 1e-15);
        assert!(lyapunov_functional(&sigma, &[0.2, 0.1], &[0.2, 0.1], &map).is_err());
    }

    #[test]
    fn selector_cases() {
        assert_eq!(contamination_selector(&[0], 2).unwrap().matrix().as_slice(), &[1.0, 0.0]);
        assert_eq!(contamination_selector(&[0, 1, 2], 3).unwrap().matrix(), &DMatrix::identity(3, 3));
        let c = contamination_selector(&[2], 3).unwrap();
        assert_eq!(c.apply(&DVector::from_vec(vec![1.0, 2.0, 3.0]))[0], 3.0);
        assert!(contamination_selector(&[3], 3).is_err());
    }

    #[test]
    fn bias_zero_at_queried_point() {
        let map = FeatureMap::qff_squared_exponential(0.3, 32, crate::features::Domain::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = evaluation_functional(&map, &[vec![0.2]]).unwrap();
        let x = crate::features::evaluate_design_matrix(&map, &[vec![-0.5], vec![0.2], vec![0.7]]).unwrap();
        assert!(relative_bias(&c, &x, &PriorOperator::identity(32)).unwrap() <= 1e-8);
    }

    #[test]
    fn bias_zero_identity_design() {
        let c = LinearFunctional::new(DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0]), "c").unwrap();
        assert!(relative_bias(&c, &DMatrix::identity(3, 3), &PriorOperator::identity(3)).unwrap() < 1e-14);
    }

    #[test]
    fn projection_coordinate_example() {
        let c = contamination_selector(&[0], 2).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let pd = project_data(&x, &c, &PriorOperator::identity(2)).unwrap();
        assert_abs_diff_eq!(pd.z[(0, 0)], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pd.j[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pd.j[(0, 1)], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_of_row_span_has_no_residual() {
        let c = LinearFunctional::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]), "c").unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.5, 3.0]) * c.matrix();
        let pd = project_data(&x, &c, &PriorOperator::identity(3)).unwrap();
        assert!(pd.j.norm() < 1e-12);
    }

    #[test]
    fn mmd_identical_measures() {
        let k = Kernel::SquaredExponential { lengthscale: 0.3 };
        let quad = QuadratureRule { nodes: vec![vec![0.1], vec![0.6]], weights: vec![0.3, 0.7] };
        let v = mmd_bias(&|_| 1.0, &quad, &[vec![0.1], vec![0.6]], &[0.3, 0.7], &k).unwrap();
        assert!(v < 1e-7);
        let single = mmd_bias(&|_| 1.0, &QuadratureRule::point_mass(vec![0.4]), &[vec![0.4]], &[1.0], &k).unwrap();
        assert!(single < 1e-7);
    }
}
