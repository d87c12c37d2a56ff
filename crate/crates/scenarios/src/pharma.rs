//! Two-compartment pharmacokinetics: choose blood-sampling times that are
//! good for every rate vector in a box, then recover the rates by maximum
//! likelihood and compare against equally spaced sampling.
//!
//! The stomach concentration `c_s` and blood concentration `c_b` follow
//! `c_s' = -a c_s` and `c_b' = b c_s - d c_b` with `gamma = (a, b, d)`. The
//! trajectory pair is embedded with coefficients `(theta_s, theta_b)`, one
//! block per compartment. Only `c_b` is observed, so the design targets the
//! blood block of the solution space of the system.

use nalgebra::{DMatrix, DVector};
use oed_core::design::{self, Criterion, DesignObjective};
use oed_core::estimators::EstimatorKind;
use oed_core::features::{FeatureMap, PriorOperator};
use oed_core::functionals::{self, DiscretizedOperator, FunctionalFamily, LinearFunctional, NullSpaceRule};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{NoiseKind, PharmaParams, ScenarioConfig};
use crate::error::{Result, ScenarioError};
use crate::numerics::{linspace, nelder_mead_box, noise, stream_rng};

/// Dimension of the solution space of the two-state system.
const SOLUTION_DIM: usize = 2;

/// Convergence tolerance of the likelihood search.
const NM_TOL: f64 = 1e-16;

/// The two-compartment system with rates `gamma = (a, b, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSystem {
    pub gamma: [f64; 3],
    /// Initial state `(c_s(0), c_b(0))`.
    pub initial: [f64; 2],
    pub t_end: f64,
}

impl OdeSystem {
    pub fn rhs(&self, _t: f64, y: &[f64]) -> Vec<f64> {
        let [a, b, d] = self.gamma;
        vec![-a * y[0], b * y[0] - d * y[1]]
    }

    /// System matrix `M` of `u' = M u`.
    pub fn matrix(gamma: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-gamma[0], 0.0, gamma[1], -gamma[2]])
    }

    /// States at `times` from RK4 with `steps` steps over `[0, t_end]`;
    /// off-grid times finish with one partial step from the grid point below.
    /// Agrees with [`crate::numerics::rk4_at`] on the same inputs.
    pub fn states_at(&self, times: &[f64], steps: usize) -> Vec<[f64; 2]> {
        let h = self.t_end / steps as f64;
        let f = |y: [f64; 2]| {
            let [a, b, d] = self.gamma;
            [-a * y[0], b * y[0] - d * y[1]]
        };
        let step = |y: [f64; 2], h: f64| {
            let k1 = f(y);
            let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
            [
                y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ]
        };
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
        let mut out = vec![[0.0; 2]; times.len()];
        let mut y = self.initial;
        let mut k = 0usize;
        for i in order {
            let t = times[i];
            let target = ((t / h).floor() as usize).min(steps);
            while k < target {
                y = step(y, h);
                k += 1;
            }
            let rest = t - k as f64 * h;
            out[i] = if rest.abs() <= 1e-12 * h.max(t.abs()) { y } else { step(y, rest) };
        }
        out
    }

    /// Blood concentration at `times`.
    pub fn blood_at(&self, times: &[f64], steps: usize) -> Vec<f64> {
        self.states_at(times, steps).into_iter().map(|s| s[1]).collect()
    }
}

/// Sampling plans compared by the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PharmaDesignKind {
    Robust,
    EquallySpaced,
}

/// Mean squared error of the recovered rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PharmaRow {
    pub n_samples: usize,
    pub design_kind: PharmaDesignKind,
    /// Mean of `|gamma_hat - gamma|^2` over the seeds.
    pub gamma_mse: f64,
    pub gamma_mse_se: f64,
    /// Robust design criterion of the sampling plan.
    pub objective: f64,
}

/// Sampling times of one plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PharmaDesign {
    pub n_samples: usize,
    pub design_kind: PharmaDesignKind,
    pub times: Vec<f64>,
}

/// Everything the pharmacokinetic run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PharmaOutput {
    pub rows: Vec<PharmaRow>,
    pub designs: Vec<PharmaDesign>,
}

/// Null-space functional of the discretized system for rates `gamma`,
/// acting on the stacked coefficients `(theta_s, theta_b)`.
pub fn trajectory_functional(map: &FeatureMap, grid: &[f64], gamma: &[f64]) -> oed_core::Result<LinearFunctional> {
    let op = DiscretizedOperator::linear_system(map, grid, 2, &|_| OdeSystem::matrix(gamma))?;
    let (c, _) = functionals::ode_nullspace_functional(&op, NullSpaceRule::Order(SOLUTION_DIM))?;
    Ok(c)
}

/// Coordinates of the blood trajectory, sampled on `grid`, in the span of
/// the blood trajectories of the solution space for rates `gamma`.
///
/// The solution trajectories come from [`trajectory_functional`]; with `U`
/// an orthonormal basis of their blood values on the grid and `G` the grid
/// evaluation rows, the functional is `U^T G` acting on `theta_b`.
pub fn blood_functional(map: &FeatureMap, grid: &[f64], gamma: &[f64]) -> oed_core::Result<LinearFunctional> {
    let m = map.dim();
    let c = trajectory_functional(map, grid, gamma)?;
    let g = oed_core::features::evaluate_design_matrix(map, &grid.iter().map(|&t| vec![t]).collect::<Vec<_>>())?;
    let traj = &g * c.matrix().columns(m, m).transpose();
    let u = traj.qr().q();
    LinearFunctional::new(u.transpose() * g, "blood solution space")
}

/// Observation rows `phi(t)` of the blood compartment.
pub fn observation_rows(map: &FeatureMap, times: &[f64]) -> Result<DMatrix<f64>> {
    let m = map.dim();
    let mut x = DMatrix::zeros(times.len(), m);
    for (i, &t) in times.iter().enumerate() {
        x.set_row(i, &map.eval(&[t])?.transpose());
    }
    Ok(x)
}

/// Tensor grid with `per_axis` points along each side of the box.
pub fn gamma_grid(bounds: &[[f64; 2]], per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds.iter().map(|b| linspace(b[0], b[1], per_axis)).collect();
    let mut out = vec![vec![]];
    for axis in &axes {
        out = out.into_iter().flat_map(|prefix| axis.iter().map(move |&v| [prefix.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Maximum-likelihood rates for Gaussian noise: least-squares fit of the
/// blood trajectory, Nelder–Mead over the box from its center.
pub fn fit_gamma(times: &[f64], y: &[f64], p: &PharmaParams) -> Vec<f64> {
    let center: Vec<f64> = p.gamma_box.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
    let loss = |g: &[f64]| {
        let sys = OdeSystem { gamma: [g[0], g[1], g[2]], initial: [p.c_dose, 0.0], t_end: p.t_end };
        sys.blood_at(times, p.rk4_steps).iter().zip(y).map(|(f, o)| (f - o).powi(2)).sum::<f64>()
    };
    nelder_mead_box(&loss, &center, &p.gamma_box, p.nm_max_iter, NM_TOL).x
}

fn check(p: &PharmaParams) -> Result<()> {
    if p.gamma_true.len() != 3 || p.gamma_box.len() != 3 {
        return Err(ScenarioError::Config("pharma needs three rates and a three-sided box".into()));
    }
    if p.gamma_box.iter().zip(&p.gamma_true).any(|(b, g)| !(b[0] < b[1] && b[0] <= *g && *g <= b[1])) {
        return Err(ScenarioError::Config("true rates must lie inside a non-degenerate box".into()));
    }
    if p.seeds == 0 || p.sample_counts.contains(&0) || p.rk4_steps == 0 || p.n_candidates < 2 {
        return Err(ScenarioError::Config("seeds, sample counts, RK4 steps and candidates must be positive".into()));
    }
    Ok(())
}

/// Robust greedy sampling times and equally spaced times for `n` samples.
fn plans(obj: &DesignObjective, cand_t: &[f64], cands: &DMatrix<f64>, p: &PharmaParams, n: usize) -> Result<[(PharmaDesignKind, Vec<f64>); 2]> {
    let greedy = design::greedy_design(obj, cands, n, &[])?;
    let counts = greedy.allocation.counts.expect("greedy returns counts");
    let robust: Vec<f64> = counts.iter().zip(cand_t).flat_map(|(&c, &t)| std::iter::repeat_n(t, c)).collect();
    let spaced: Vec<f64> = (1..=n).map(|k| p.t_end * k as f64 / n as f64).collect();
    Ok([(PharmaDesignKind::Robust, robust), (PharmaDesignKind::EquallySpaced, spaced)])
}

/// Designs both plans for every sample count and scores them by the error
/// of the recovered rates.
pub fn run(cfg: &ScenarioConfig) -> Result<PharmaOutput> {
    let p: &PharmaParams = cfg.block(&cfg.pharma)?;
    check(p)?;
    let map = cfg.feature_map()?;
    if map.input_dim() != 1 {
        return Err(ScenarioError::Config("pharma needs a one-dimensional feature map".into()));
    }
    let grid = linspace(0.0, p.t_end, p.collocation_points);
    let family = FunctionalFamily::from_generator(gamma_grid(&p.gamma_box, p.gamma_grid_per_axis), |g| blood_functional(&map, &grid, g))?;
    let v0 = PriorOperator::identity(map.dim());
    // The design noise level stays positive so a noiseless run keeps the
    // same sampling plan.
    let design_sigma = if cfg.sigma > 0.0 { cfg.sigma } else { ScenarioConfig::defaults(cfg.scenario).sigma };
    let obj = DesignObjective::robust(Criterion::InverseTrace, EstimatorKind::Ridge, family, cfg.lam, design_sigma, v0);
    let cand_t = linspace(0.0, p.t_end, p.n_candidates);
    let cands = observation_rows(&map, &cand_t)?;
    let truth = OdeSystem { gamma: [p.gamma_true[0], p.gamma_true[1], p.gamma_true[2]], initial: [p.c_dose, 0.0], t_end: p.t_end };

    let mut rows = Vec::new();
    let mut designs = Vec::new();
    for (ni, &n) in p.sample_counts.iter().enumerate() {
        for (kind, times) in plans(&obj, &cand_t, &cands, p, n)? {
            let objective = obj.value_unnormalized(&observation_rows(&map, &times)?, &DVector::from_element(n, 1.0));
            let clean = truth.blood_at(&times, p.rk4_steps);
            let errors: Vec<f64> = (0..p.seeds)
                .into_par_iter()
                .map(|s| {
                    let mut rng = stream_rng(cfg.seed, ((s as u64) << 16) + ni as u64);
                    let y: Vec<f64> = clean.iter().map(|v| v + noise(&mut rng, cfg.sigma, NoiseKind::Gaussian)).collect();
                    let g = fit_gamma(&times, &y, p);
                    g.iter().zip(&p.gamma_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .collect();
            let k = errors.len() as f64;
            let mse = errors.iter().sum::<f64>() / k;
            let var = errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            rows.push(PharmaRow { n_samples: n, design_kind: kind, gamma_mse: mse, gamma_mse_se: (var / k).sqrt(), objective });
            designs.push(PharmaDesign { n_samples: n, design_kind: kind, times });
        }
    }
    Ok(PharmaOutput { rows, designs })
}
