//! Finite-dimensional feature maps `x -> Phi(x)` with Jacobians, plus the
//! prior operator `V0` that shapes the norm bound on the coefficients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::linalg;

/// Positive-definite kernels supported by the Nyström construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `exp(-|x - x'|^2 / (2 l^2))`.
    SquaredExponential { lengthscale: f64 },
    /// `x . x'`.
    Linear,
    /// `(x . x' + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
}

impl Kernel {
    /// Kernel value.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::SquaredExponential { lengthscale } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            Kernel::Linear => dot(a, b),
            Kernel::Polynomial { degree, offset } => (dot(a, b) + offset).powi(*degree as i32),
        }
    }

    /// Gradient of `k(a, x)` with respect to `x`.
    pub fn grad_second(&self, a: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            Kernel::SquaredExponential { lengthscale } => {
                let k = self.eval(a, x);
                let l2 = lengthscale * lengthscale;
                a.iter().zip(x).map(|(ai, xi)| -(xi - ai) / l2 * k).collect()
            }
            Kernel::Linear => a.to_vec(),
            Kernel::Polynomial { degree, offset } => {
                if *degree == 0 {
                    return vec![0.0; a.len()];
                }
                let base = (dot(a, x) + offset).powi(*degree as i32 - 1) * (*degree as f64);
                a.iter().map(|ai| base * ai).collect()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    /// Builds a box, checking that it is non-empty and bounded.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(OedError::Dimension("domain bounds must have equal, positive length".into()));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(OedError::InvalidArgument(format!("bad domain interval [{a}, {b}]")));
            }
        }
        Ok(Domain { lo, hi })
    }

    /// The cube `[lo, hi]^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Domain::new(vec![lo; d], vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

/// Concrete representation behind a [`FeatureMap`].
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// `Phi(x) = x`.
    Linear,
    /// One-dimensional monomials `(x^min_degree, ..., x^max_degree)`.
    Polynomial { min_degree: u32, max_degree: u32 },
    /// Quadrature Fourier features of the squared-exponential kernel.
    /// Feature `2k` is `sqrt(w_k) cos(omega_k . x)`, feature `2k + 1` is
    /// `sqrt(w_k) sin(omega_k . x)`.
    Qff { lengthscale: f64, freqs: Vec<Vec<f64>>, sqrt_w: Vec<f64> },
    /// Nyström features `Lambda^{-1/2} U^T k(landmarks, x)`.
    Nystrom { kernel: Kernel, landmarks: Vec<Vec<f64>>, proj: DMatrix<f64> },
}

/// Deterministic map `R^d -> R^m` with Jacobian access.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    input_dim: usize,
    dim: usize,
    kind: FeatureKind,
    domain: Option<Domain>,
}

impl FeatureMap {
    /// Identity features on `R^d`.
    pub fn linear(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(OedError::InvalidArgument("input dimension must be positive".into()));
        }
        Ok(FeatureMap { input_dim: d, dim: d, kind: FeatureKind::Linear, domain: None })
    }

    /// Monomials of a scalar input from `min_degree` to `max_degree`.
    pub fn polynomial(min_degree: u32, max_degree: u32) -> Result<Self> {
        if min_degree > max_degree {
            return Err(OedError::InvalidArgument("min_degree exceeds max_degree".into()));
        }
        Ok(FeatureMap {
            input_dim: 1,
            dim: (max_degree - min_degree + 1) as usize,
            kind: FeatureKind::Polynomial { min_degree, max_degree },
            domain: None,
        })
    }

    /// Quadrature Fourier features for the squared-exponential kernel.
    ///
    /// Frequencies are the Gauss–Hermite nodes scaled by `sqrt(2) / l`,
    /// tensorized over the input dimensions. With `q` nodes per axis the map
    /// has `m = q^d` features, so `m` must be the `d`-th power of an even
    /// integer. Only one frequency of each `+-omega` pair is kept (its
    /// weight doubled), and each kept frequency contributes a cosine and a
    /// sine feature.
    pub fn qff_squared_exponential(lengthscale: f64, m: usize, domain: Domain) -> Result<Self> {
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(OedError::InvalidArgument(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if m == 0 || m % 2 == 1 {
            return Err(OedError::InvalidArgument(format!("QFF feature count must be even, got {m}")));
        }
        let d = domain.dim();
        if d > 3 {
            return Err(OedError::InvalidArgument("QFF tensor grids are limited to d <= 3".into()));
        }
        let q = (m as f64).powf(1.0 / d as f64).round() as usize;
        if q.pow(d as u32) != m || q % 2 == 1 {
            return Err(OedError::InvalidArgument(format!(
                "QFF feature count {m} is not an even integer to the power {d}"
            )));
        }
        let (nodes, weights) = gauss_hermite(q);
        let mut freqs = Vec::with_capacity(m / 2);
        let mut sqrt_w = Vec::with_capacity(m / 2);
        let norm = PI.powf(d as f64 / 2.0);
        let mut idx = vec![0usize; d];
        loop {
            if nodes[idx[0]] > 0.0 {
                let omega: Vec<f64> = idx.iter().map(|&i| 2f64.sqrt() * nodes[i] / lengthscale).collect();
                let w: f64 = idx.iter().map(|&i| weights[i]).product::<f64>() * 2.0 / norm;
                freqs.push(omega);
                sqrt_w.push(w.sqrt());
            }
            let mut k = 0;
            loop {
                if k == d {
                    break;
                }
                idx[k] += 1;
                if idx[k] < q {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        Ok(FeatureMap { input_dim: d, dim: m, kind: FeatureKind::Qff { lengthscale, freqs, sqrt_w }, domain: Some(domain) })
    }

    /// Nyström features on the given landmarks.
    ///
    /// Eigenvalues of the landmark gram below `1e-10 * lambda_max` are
    /// dropped, so the resulting dimension may be smaller than the number of
    /// landmarks. An eigenvalue below `-1e-8` is an error.
    pub fn nystrom(kernel: Kernel, landmarks: Vec<Vec<f64>>) -> Result<Self> {
        if landmarks.is_empty() {
            return Err(OedError::InvalidArgument("Nyström features need at least one landmark".into()));
        }
        let d = landmarks[0].len();
        if d == 0 || landmarks.iter().any(|l| l.len() != d) {
            return Err(OedError::Dimension("landmarks must share a positive dimension".into()));
        }
        let n = landmarks.len();
        let gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&landmarks[i], &landmarks[j]));
        let (vals, vecs) = linalg::sym_eig(&gram);
        if vals.min() < -1e-8 {
            return Err(OedError::InvalidArgument(format!(
                "landmark gram has eigenvalue {:.3e} below -1e-8",
                vals.min()
            )));
        }
        let cut = 1e-10 * vals.max();
        let keep: Vec<usize> = (0..n).rev().filter(|&k| vals[k] > cut).collect();
        if keep.is_empty() {
            return Err(OedError::Singular("landmark gram is numerically zero".into()));
        }
        let mut proj = DMatrix::zeros(keep.len(), n);
        for (r, &k) in keep.iter().enumerate() {
            let s = 1.0 / vals[k].sqrt();
            for j in 0..n {
                proj[(r, j)] = s * vecs[(j, k)];
            }
        }
        Ok(FeatureMap { input_dim: d, dim: keep.len(), kind: FeatureKind::Nystrom { kernel, landmarks, proj }, domain: None })
    }

    /// Number of features `m`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn domain(&self) -> Option<&Domain> {
        self.domain.as_ref()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(OedError::Dimension(format!(
                "point has dimension {}, feature map expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Feature vector `Phi(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_input(x)?;
        Ok(match &self.kind {
            FeatureKind::Linear => DVector::from_column_slice(x),
            FeatureKind::Polynomial { min_degree, max_degree } => {
                DVector::from_iterator(self.dim, (*min_degree..=*max_degree).map(|k| x[0].powi(k as i32)))
            }
            FeatureKind::Qff { freqs, sqrt_w, .. } => {
                let mut out = DVector::zeros(self.dim);
                for (k, (om, sw)) in freqs.iter().zip(sqrt_w).enumerate() {
                    let a = dot(om, x);
                    out[2 * k] = sw * a.cos();
                    out[2 * k + 1] = sw * a.sin();
                }
                out
            }
            FeatureKind::Nystrom { kernel, landmarks, proj } => {
                let kx = DVector::from_iterator(landmarks.len(), landmarks.iter().map(|l| kernel.eval(l, x)));
                proj * kx
            }
        })
    }

    /// Jacobian as a `d x m` matrix: entry `(i, j)` is `d Phi_j / d x_i`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let d = self.input_dim;
        Ok(match &self.kind {
            FeatureKind::Linear => DMatrix::identity(d, d),
            FeatureKind::Polynomial { min_degree, max_degree } => {
                DMatrix::from_iterator(
                    1,
                    self.dim,
                    (*min_degree..=*max_degree).map(|k| if k == 0 { 0.0 } else { k as f64 * x[0].powi(k as i32 - 1) }),
                )
            }
            FeatureKind::Qff { freqs, sqrt_w, .. } => {
                let mut out = DMatrix::zeros(d, self.dim);
                for (k, (om, sw)) in freqs.iter().zip(sqrt_w).enumerate() {
                    let a = dot(om, x);
                    let (s, c) = a.sin_cos();
                    for i in 0..d {
                        out[(i, 2 * k)] = -sw * om[i] * s;
                        out[(i, 2 * k + 1)] = sw * om[i] * c;
                    }
                }
                out
            }
            FeatureKind::Nystrom { kernel, landmarks, proj } => {
                let mut g = DMatrix::zeros(landmarks.len(), d);
                for (r, l) in landmarks.iter().enumerate() {
                    for (i, v) in kernel.grad_second(l, x).into_iter().enumerate() {
                        g[(r, i)] = v;
                    }
                }
                (proj * g).transpose()
            }
        })
    }

    /// `order`-th derivative of a scalar-input map, as an `m`-vector.
    ///
    /// Available for linear, polynomial and QFF maps; Nyström maps support
    /// orders 0 and 1 only.
    pub fn derivative_1d(&self, t: f64, order: u32) -> Result<DVector<f64>> {
        if self.input_dim != 1 {
            return Err(OedError::Dimension("derivative_1d needs a scalar-input map".into()));
        }
        match order {
            0 => return self.eval(&[t]),
            1 => return Ok(self.jacobian(&[t])?.row(0).transpose()),
            _ => {}
        }
        Ok(match &self.kind {
            FeatureKind::Linear => DVector::zeros(1),
            FeatureKind::Polynomial { min_degree, max_degree } => DVector::from_iterator(
                self.dim,
                (*min_degree..=*max_degree).map(|k| {
                    if k < order {
                        0.0
                    } else {
                        let fall: f64 = (0..order).map(|j| (k - j) as f64).product();
                        fall * t.powi((k - order) as i32)
                    }
                }),
            ),
            FeatureKind::Qff { freqs, sqrt_w, .. } => {
                let mut out = DVector::zeros(self.dim);
                let shift = order as f64 * PI / 2.0;
                for (k, (om, sw)) in freqs.iter().zip(sqrt_w).enumerate() {
                    let w = om[0];
                    let a = w * t + shift;
                    let scale = sw * w.powi(order as i32);
                    out[2 * k] = scale * a.cos();
                    out[2 * k + 1] = scale * a.sin();
                }
                out
            }
            FeatureKind::Nystrom { .. } => {
                return Err(OedError::InvalidArgument("Nyström maps provide derivatives up to order 1".into()))
            }
        })
    }
}

/// Stacks `Phi(x_i)^T` as the rows of an `n x m` matrix.
pub fn evaluate_design_matrix(map: &FeatureMap, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(points.len(), map.dim());
    for (i, p) in points.iter().enumerate() {
        let row = map.eval(p)?;
        x.set_row(i, &row.transpose());
    }
    Ok(x)
}

/// Gauss–Hermite rule for the weight `exp(-t^2)` with `q` nodes.
pub fn gauss_hermite(q: usize) -> (Vec<f64>, Vec<f64>) {
    let diag = vec![0.0; q];
    let off: Vec<f64> = (1..q).map(|k| (k as f64 / 2.0).sqrt()).collect();
    linalg::golub_welsch(&diag, &off, PI.sqrt())
}

/// Symmetric positive-definite prior operator `V0` with cached factors.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorOperator {
    matrix: DMatrix<f64>,
    is_identity: bool,
    inv: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl PriorOperator {
    /// The identity operator on `R^m`.
    pub fn identity(m: usize) -> Self {
        PriorOperator {
            matrix: DMatrix::identity(m, m),
            is_identity: true,
            inv: DMatrix::identity(m, m),
            inv_sqrt: DMatrix::identity(m, m),
        }
    }

    /// A general prior; fails unless the matrix is symmetric positive-definite.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(OedError::Dimension("prior operator must be square".into()));
        }
        let sym = linalg::symmetrize(&matrix);
        let asym = (&matrix - &sym).norm();
        if asym > 1e-10 * sym.norm().max(1.0) {
            return Err(OedError::InvalidArgument("prior operator must be symmetric".into()));
        }
        let (vals, _) = linalg::sym_eig(&sym);
        if vals.len() > 0 && vals.min() <= 0.0 {
            return Err(OedError::InvalidArgument(format!(
                "prior operator minimum eigenvalue {:.3e} is not positive",
                vals.min()
            )));
        }
        let inv = linalg::sym_fn(&sym, |v| 1.0 / v);
        let inv_sqrt = linalg::sym_fn(&sym, |v| 1.0 / v.sqrt());
        Ok(PriorOperator { matrix: sym, is_identity: false, inv, inv_sqrt })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_identity(&self) -> bool {
        self.is_identity
    }

    /// `V0^{-1}`.
    pub fn inv(&self) -> &DMatrix<f64> {
        &self.inv
    }

    /// `V0^{-1/2}`.
    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    /// `A V0^{-1/2}` without a product when `V0 = I`.
    pub fn whiten(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_identity {
            a.clone()
        } else {
            a * &self.inv_sqrt
        }
    }

    /// `theta^T V0 theta`.
    pub fn norm_sq(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.matrix * theta))
    }
}

/// Serializable description of a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    Linear { d: usize },
    Polynomial { min_degree: u32, max_degree: u32 },
    Qff { lengthscale: f64, m: usize, domain: Domain },
    Nystrom { kernel: Kernel, landmarks: Vec<Vec<f64>> },
    /// Nyström features on a regular grid of `per_axis^d` landmarks.
    NystromGrid { kernel: Kernel, domain: Domain, per_axis: usize },
}

impl FeatureSpec {
    /// Builds the described map.
    pub fn build(&self) -> Result<FeatureMap> {
        match self {
            FeatureSpec::Linear { d } => FeatureMap::linear(*d),
            FeatureSpec::Polynomial { min_degree, max_degree } => FeatureMap::polynomial(*min_degree, *max_degree),
            FeatureSpec::Qff { lengthscale, m, domain } => {
                FeatureMap::qff_squared_exponential(*lengthscale, *m, Domain::new(domain.lo.clone(), domain.hi.clone())?)
            }
            FeatureSpec::Nystrom { kernel, landmarks } => FeatureMap::nystrom(kernel.clone(), landmarks.clone()),
            FeatureSpec::NystromGrid { kernel, domain, per_axis } => {
                FeatureMap::nystrom(kernel.clone(), grid_points(domain, *per_axis))
            }
        }
    }
}

/// Regular grid with `per_axis` points along every axis of the box.
pub fn grid_points(domain: &Domain, per_axis: usize) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let axis = |i: usize, k: usize| {
        if per_axis == 1 {
            0.5 * (domain.lo[i] + domain.hi[i])
        } else {
            domain.lo[i] + (domain.hi[i] - domain.lo[i]) * k as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            (0..d)
                .map(|i| {
                    let k = flat % per_axis;
                    flat /= per_axis;
                    axis(i, k)
                })
                .collect()
        })
        .collect()
}
