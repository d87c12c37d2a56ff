//! Stability certification of a learned controller around a circular
//! reference, comparing confidence sets built on the decrease functional
//! with full-dimensional sets projected onto it.
//!
//! The plant is `x' = A phi(x) + u` with `theta = vec(A)` and the controller
//! `u = -A_hat phi(x) - K (x - x_ref) + x_ref'` with `x_ref(t) = (sin t,
//! cos t)`. For `V = z^T Sigma z` with `z = x - x_ref`,
//! `dV/dt = 2 z^T Sigma (A - A_hat) phi(x) - 2 K z^T Sigma z`, and the
//! controller is certified on the tube around the reference once an upper
//! confidence bound on this quantity is negative at every tube point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use oed_core::features::{evaluate_design_matrix, FeatureMap};
use oed_core::functionals;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{LyapunovParams, NoiseKind, ScenarioConfig};
use crate::error::{Result, ScenarioError};
use crate::numerics::{linspace, noise, rk4_step, stream_rng};

/// State dimension.
const D: usize = 2;

/// The nonlinear drift `x + sigmoid(2 x_1) (1, -1) + 0.5 (sin(pi x_2), cos(pi x_1))`.
pub fn true_field(x: &[f64]) -> [f64; 2] {
    let s = 1.0 / (1.0 + (-2.0 * x[0]).exp());
    [x[0] + s + 0.5 * (PI * x[1]).sin(), x[1] - s + 0.5 * (PI * x[0]).cos()]
}

/// Reference trajectory `(sin t, cos t)`.
pub fn x_ref(t: f64) -> [f64; 2] {
    [t.sin(), t.cos()]
}

/// The controlled plant with its dynamics in feature form.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub map: FeatureMap,
    /// `A` of shape `2 x m`; `vec(A)` is the true coefficient vector.
    pub a: DMatrix<f64>,
    pub gain: f64,
    /// Lyapunov matrix.
    pub sigma: DMatrix<f64>,
    pub tube_width: f64,
    /// Sampling interval of the derivative oracle.
    pub dt: f64,
}

impl ControlSystem {
    /// Fits `A` to [`true_field`] by ridge regression on a grid with
    /// `per_axis^2` points.
    pub fn fit(map: FeatureMap, p: &LyapunovParams) -> Result<Self> {
        let axis = linspace(-p.half_width, p.half_width, p.fit_per_axis);
        let pts: Vec<Vec<f64>> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect();
        let phi = evaluate_design_matrix(&map, &pts)?;
        let m = map.dim();
        let mut f = DMatrix::zeros(pts.len(), D);
        for (i, x) in pts.iter().enumerate() {
            let v = true_field(x);
            f[(i, 0)] = v[0];
            f[(i, 1)] = v[1];
        }
        let gram = phi.transpose() * &phi + DMatrix::identity(m, m) * p.fit_lam;
        let rhs = phi.transpose() * f;
        let a = gram.cholesky().ok_or_else(|| ScenarioError::Numerical("dynamics fit is not positive definite".into()))?.solve(&rhs).transpose();
        Ok(ControlSystem { map, a, gain: p.gain, sigma: DMatrix::identity(D, D), tube_width: p.tube_width, dt: p.sampling_interval })
    }

    /// `vec(A)` in column-major order, entry `(k, j)` at index `j d + k`.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(self.a.as_slice())
    }

    /// Model drift `A phi(x)`.
    pub fn drift(&self, x: &[f64]) -> Result<[f64; 2]> {
        let v = &self.a * self.map.eval(x)?;
        Ok([v[0], v[1]])
    }

    /// Finite-difference derivative `(x(dt) - x) / dt` of the uncontrolled
    /// model dynamics from `x`, one RK4 step, plus noise.
    pub fn derivative_oracle(&self, x: &[f64], rng: &mut impl Rng, sigma: f64) -> Result<[f64; 2]> {
        let rhs = |_t: f64, y: &[f64]| -> Vec<f64> { self.drift(y).map(|v| v.to_vec()).unwrap_or_else(|_| vec![f64::NAN; D]) };
        let next = rk4_step(&rhs, 0.0, x, self.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ScenarioError::Numerical("derivative oracle left the feature domain".into()));
        }
        Ok([
            (next[0] - x[0]) / self.dt + noise(rng, sigma, NoiseKind::Gaussian),
            (next[1] - x[1]) / self.dt + noise(rng, sigma, NoiseKind::Gaussian),
        ])
    }
}

/// A tube point: state, reference and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct TubePoint {
    pub x: Vec<f64>,
    pub x_ref: Vec<f64>,
}

impl TubePoint {
    fn z(&self) -> [f64; 2] {
        [self.x[0] - self.x_ref[0], self.x[1] - self.x_ref[1]]
    }
}

/// `angles x offsets` points at distance `width` from the reference, in
/// directions `2 pi k / offsets`.
pub fn tube(angles: usize, offsets: usize, width: f64) -> Vec<TubePoint> {
    let mut out = Vec::with_capacity(angles * offsets);
    for i in 0..angles {
        let t = 2.0 * PI * i as f64 / angles as f64;
        let r = x_ref(t);
        for k in 0..offsets {
            let a = 2.0 * PI * k as f64 / offsets as f64;
            out.push(TubePoint { x: vec![r[0] + width * a.cos(), r[1] + width * a.sin()], x_ref: r.to_vec() });
        }
    }
    out
}

/// Query strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// Uniform over the whole domain.
    #[serde(rename = "random")]
    Random,
    /// Uniform over the tube.
    #[serde(rename = "random-ref")]
    RandomRef,
    /// Largest posterior variance over a grid of the whole domain.
    #[serde(rename = "unc")]
    Unc,
    /// Largest posterior variance over the tube points.
    #[serde(rename = "unc-ref")]
    UncRef,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::RandomRef, Strategy::Unc, Strategy::UncRef];
}

/// Which confidence set bounds the decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    /// Adaptive set on the tube functionals.
    Ours,
    /// Full-dimensional self-normalized set projected onto each functional.
    ProjectedClassical,
}

/// Supremum bound after `step` data points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovRow {
    pub step: usize,
    pub strategy: Strategy,
    pub seed: usize,
    pub set_kind: SetKind,
    pub sup_dv_bound: f64,
    pub certified: bool,
}

/// Certification step per strategy and set, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSummary {
    pub strategy: Strategy,
    pub set_kind: SetKind,
    /// Mean number of data points at the first negative bound; runs that
    /// never certify count as the budget.
    pub mean_certification_step: f64,
    pub certified_runs: usize,
    pub seeds: usize,
}

/// Everything the Lyapunov run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovOutput {
    pub rows: Vec<LyapunovRow>,
    pub summary: Vec<LyapunovSummary>,
    /// `sup 2 z^T Sigma (f(x) - A phi(x)) - 2 K z^T Sigma z` over the tube:
    /// the exact decrease when the controller cancels the fitted model.
    pub ground_truth_sup: f64,
    /// Rank of the tube functional basis.
    pub basis_rank: usize,
}

/// Tube functionals in an orthonormal basis: `C_x = a_x^T C + r_x`.
struct TubeBasis {
    /// `p x (d m)` with orthonormal rows.
    c: DMatrix<f64>,
    /// Rows `a_x^T`.
    coords: DMatrix<f64>,
    /// `|r_x|`.
    residual: Vec<f64>,
}

fn tube_basis(sys: &ControlSystem, pts: &[TubePoint], tol: f64) -> Result<TubeBasis> {
    let m = sys.map.dim();
    let mut stacked = DMatrix::zeros(pts.len(), D * m);
    for (i, p) in pts.iter().enumerate() {
        let c = functionals::lyapunov_functional(&sys.sigma, &p.x, &p.x_ref, &sys.map)?;
        stacked.set_row(i, &c.matrix().row(0));
    }
    let svd = stacked.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let s1 = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > tol * s1).collect();
    if keep.is_empty() {
        return Err(ScenarioError::Numerical("tube functionals vanish".into()));
    }
    let c = vt.select_rows(&keep);
    let coords = &stacked * c.transpose();
    let residual = (0..pts.len()).map(|i| (stacked.row(i) - coords.row(i) * &c).norm()).collect();
    Ok(TubeBasis { c, coords, residual })
}

/// Shared precomputation for all runs.
struct Setup<'a> {
    sys: &'a ControlSystem,
    p: &'a LyapunovParams,
    pts: Vec<TubePoint>,
    /// Features of the tube points, one row each.
    tube_phi: DMatrix<f64>,
    basis: TubeBasis,
    /// Basis columns acting on component `k` of the state, `p x m` each.
    c_blocks: [DMatrix<f64>; 2],
    grid: Vec<Vec<f64>>,
    grid_phi: DMatrix<f64>,
    lam: f64,
    noise_sd: f64,
    delta: f64,
}

/// Incremental state of one run.
struct RunState {
    g_inv: DMatrix<f64>,
    logdet_g: f64,
    b: [DVector<f64>; 2],
    omega_inv: DMatrix<f64>,
    logdet_omega: f64,
    tube_q: DVector<f64>,
    tube_s: DVector<f64>,
    grid_q: DVector<f64>,
}

impl<'a> Setup<'a> {
    fn initial_state(&self) -> RunState {
        let m = self.sys.map.dim();
        let pdim = self.basis.c.nrows();
        let lam = self.lam;
        RunState {
            g_inv: DMatrix::identity(m, m) / lam,
            logdet_g: 0.0,
            b: [DVector::zeros(m), DVector::zeros(m)],
            omega_inv: DMatrix::identity(pdim, pdim) / lam,
            logdet_omega: 0.0,
            tube_q: DVector::from_iterator(self.pts.len(), self.tube_phi.row_iter().map(|r| r.norm_squared() / lam)),
            tube_s: DVector::from_iterator(self.pts.len(), self.basis.coords.row_iter().map(|r| r.norm_squared() / lam)),
            grid_q: DVector::from_iterator(self.grid.len(), self.grid_phi.row_iter().map(|r| r.norm_squared() / lam)),
        }
    }

    /// Adds the query at `x` with derivative observation `y`.
    fn add(&self, st: &mut RunState, x: &[f64], y: [f64; 2]) -> Result<()> {
        let phi = self.sys.map.eval(x)?;
        let s2 = self.noise_sd * self.noise_sd;
        let u = &st.g_inv * &phi;
        let den = s2 + phi.dot(&u);
        st.g_inv.ger(-1.0 / den, &u, &u, 1.0);
        st.logdet_g += (den / s2).ln();
        let tu = &self.tube_phi * &u;
        st.tube_q.zip_apply(&tu, |q, t| *q -= t * t / den);
        let gu = &self.grid_phi * &u;
        st.grid_q.zip_apply(&gu, |q, t| *q -= t * t / den);
        for k in 0..D {
            st.b[k].axpy(y[k] / s2, &phi, 1.0);
            let z = &self.c_blocks[k] * &phi;
            let v = &st.omega_inv * &z;
            let den = s2 + z.dot(&v);
            st.omega_inv.ger(-1.0 / den, &v, &v, 1.0);
            st.logdet_omega += (den / s2).ln();
            let av = &self.basis.coords * &v;
            st.tube_s.zip_apply(&av, |s, t| *s -= t * t / den);
        }
        Ok(())
    }

    /// Supremum bounds `(ours, projected classical)` at the current data.
    fn bounds(&self, st: &RunState) -> (f64, f64) {
        let log_inv_delta = (1.0 / self.delta).ln();
        let beta_ours = (2.0 * log_inv_delta + st.logdet_omega).max(0.0).sqrt() + 1.0;
        let beta_full = (2.0 * log_inv_delta + 2.0 * st.logdet_g).max(0.0).sqrt() + 1.0;
        let theta_norm = (0..D).map(|k| (&st.g_inv * &st.b[k]).norm_squared()).sum::<f64>().sqrt();
        let reach = theta_norm + 1.0 / self.lam.sqrt();
        let mut ours = f64::NEG_INFINITY;
        let mut base = f64::NEG_INFINITY;
        for (i, p) in self.pts.iter().enumerate() {
            let z = DVector::from_column_slice(&p.z());
            let sz = &self.sys.sigma * &z;
            let decay = 2.0 * self.sys.gain * z.dot(&sz);
            let o = 2.0 * (beta_ours * st.tube_s[i].max(0.0).sqrt() + self.basis.residual[i] * reach) - decay;
            let b = 2.0 * beta_full * sz.norm() * st.tube_q[i].max(0.0).sqrt() - decay;
            ours = ours.max(o);
            base = base.max(b);
        }
        (ours, base)
    }

    fn next_query(&self, strategy: Strategy, st: &RunState, rng: &mut impl Rng) -> Vec<f64> {
        let hw = self.p.half_width;
        match strategy {
            Strategy::Random => vec![rng.random_range(-hw..=hw), rng.random_range(-hw..=hw)],
            Strategy::RandomRef => {
                let t = rng.random_range(0.0..2.0 * PI);
                let r = self.sys.tube_width * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                let c = x_ref(t);
                vec![c[0] + r * a.cos(), c[1] + r * a.sin()]
            }
            Strategy::Unc => self.grid[argmax(&st.grid_q)].clone(),
            Strategy::UncRef => self.pts[argmax(&st.tube_q)].x.clone(),
        }
    }
}

fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// One strategy on one seed: bounds after the initial points and after
/// every further query, stopping once both sets certify or the budget is
/// spent.
fn run_one(setup: &Setup, cfg: &ScenarioConfig, strategy: Strategy, seed: usize, si: usize) -> Result<Vec<LyapunovRow>> {
    let p = setup.p;
    let hw = p.half_width;
    let mut st = setup.initial_state();
    let mut init_rng = stream_rng(cfg.seed, seed as u64);
    let mut noise_rng = stream_rng(cfg.seed, ((seed as u64 + 1) << 8) + si as u64);
    let mut rows = Vec::new();
    for _ in 0..p.initial_points {
        let x = vec![init_rng.random_range(-hw..=hw), init_rng.random_range(-hw..=hw)];
        let y = setup.sys.derivative_oracle(&x, &mut noise_rng, cfg.sigma)?;
        setup.add(&mut st, &x, y)?;
    }
    let mut step = p.initial_points;
    let mut done = [false; 2];
    loop {
        let (ours, base) = setup.bounds(&st);
        for (k, (kind, v)) in [(SetKind::Ours, ours), (SetKind::ProjectedClassical, base)].into_iter().enumerate() {
            if !done[k] {
                rows.push(LyapunovRow { step, strategy, seed, set_kind: kind, sup_dv_bound: v, certified: v < 0.0 });
                done[k] = v < 0.0;
            }
        }
        if (done[0] && done[1]) || step >= cfg.budget {
            break;
        }
        let x = setup.next_query(strategy, &st, &mut noise_rng);
        let y = setup.sys.derivative_oracle(&x, &mut noise_rng, cfg.sigma)?;
        setup.add(&mut st, &x, y)?;
        step += 1;
    }
    Ok(rows)
}

/// Ground-truth decrease with the controller cancelling the fitted model.
pub fn ground_truth_sup(sys: &ControlSystem, pts: &[TubePoint]) -> Result<f64> {
    let mut sup = f64::NEG_INFINITY;
    for p in pts {
        let f = true_field(&p.x);
        let a = sys.drift(&p.x)?;
        let z = DVector::from_column_slice(&p.z());
        let sz = &sys.sigma * &z;
        let diff = DVector::from_column_slice(&[f[0] - a[0], f[1] - a[1]]);
        sup = sup.max(2.0 * sz.dot(&diff) - 2.0 * sys.gain * z.dot(&sz));
    }
    Ok(sup)
}

/// Runs all strategies over all seeds.
pub fn run(cfg: &ScenarioConfig) -> Result<LyapunovOutput> {
    let p: &LyapunovParams = cfg.block(&cfg.lyapunov)?;
    if !(cfg.sigma > 0.0) || p.seeds == 0 || p.tube_angles == 0 || p.tube_offsets == 0 {
        return Err(ScenarioError::Config("lyapunov needs sigma > 0, seeds, and a non-empty tube".into()));
    }
    if cfg.budget < p.initial_points {
        return Err(ScenarioError::Config("budget is smaller than the initial design".into()));
    }
    let map = cfg.feature_map()?;
    if map.input_dim() != D {
        return Err(ScenarioError::Config("lyapunov needs a two-dimensional feature map".into()));
    }
    let sys = ControlSystem::fit(map, p)?;
    let pts = tube(p.tube_angles, p.tube_offsets, p.tube_width);
    let tube_phi = evaluate_design_matrix(&sys.map, &pts.iter().map(|q| q.x.clone()).collect::<Vec<_>>())?;
    let basis = tube_basis(&sys, &pts, p.basis_tol)?;
    let m = sys.map.dim();
    let block = |k: usize| basis.c.select_columns(&(0..m).map(|j| j * D + k).collect::<Vec<_>>());
    let c_blocks = [block(0), block(1)];
    let axis = linspace(-p.half_width, p.half_width, p.candidate_per_axis);
    let grid: Vec<Vec<f64>> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect();
    let grid_phi = evaluate_design_matrix(&sys.map, &grid)?;
    let ground = ground_truth_sup(&sys, &pts)?;
    let basis_rank = basis.c.nrows();
    let setup = Setup { sys: &sys, p, pts, tube_phi, basis, c_blocks, grid, grid_phi, lam: cfg.lam, noise_sd: cfg.sigma, delta: cfg.delta };

    let jobs: Vec<(usize, Strategy, usize)> =
        Strategy::ALL.iter().enumerate().flat_map(|(si, &s)| (0..p.seeds).map(move |seed| (si, s, seed))).collect();
    let results = jobs.par_iter().map(|&(si, s, seed)| run_one(&setup, cfg, s, seed, si)).collect::<Result<Vec<_>>>()?;

    let mut summary = Vec::new();
    for strategy in Strategy::ALL {
        for kind in [SetKind::Ours, SetKind::ProjectedClassical] {
            let mut total = 0.0;
            let mut certified = 0;
            for rows in &results {
                let first = rows.iter().find(|r| r.strategy == strategy && r.set_kind == kind && r.certified);
                let any = rows.iter().any(|r| r.strategy == strategy);
                if !any {
                    continue;
                }
                match first {
                    Some(r) => {
                        total += r.step as f64;
                        certified += 1;
                    }
                    None => total += cfg.budget as f64,
                }
            }
            summary.push(LyapunovSummary { strategy, set_kind: kind, mean_certification_step: total / p.seeds as f64, certified_runs: certified, seeds: p.seeds });
        }
    }
    Ok(LyapunovOutput { rows: results.into_iter().flatten().collect(), summary, ground_truth_sup: ground, basis_rank })
}
