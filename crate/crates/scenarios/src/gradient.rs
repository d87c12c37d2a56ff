//! Gradient estimation with an offset finite-difference design: certified
//! error as a function of the step size, and the allocation over the five
//! design points at the selected step.

use nalgebra::{DMatrix, DVector};
use oed_core::design::{self, Criterion, DesignObjective};
use oed_core::estimators::{self, EstimatorKind, InfoMatrix};
use oed_core::features::{evaluate_design_matrix, FeatureMap, PriorOperator};
use oed_core::functionals::{self, LinearFunctional};
use oed_core::linalg;
use serde::Serialize;

use crate::config::{FunctionalSpec, GradientParams, ScenarioConfig};
use crate::error::{Result, ScenarioError};
use crate::numerics::geomspace;

/// Condition number of the kernel matrix above which a row is flagged.
pub const FLAG_COND: f64 = 1e12;

/// One step size at one budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub h: f64,
    pub nu: f64,
    pub variance_term: f64,
    pub bias_term: f64,
    /// `lambda_min(W)^{-1/2} (variance_term + bias_term)`.
    pub total_error: f64,
    /// Largest eigenvalue of the residual covariance bound.
    pub residual_max_eig: f64,
    /// Kernel matrix condition number above [`FLAG_COND`].
    pub flagged: bool,
}

/// The certified-error minimizer for one budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientMinimizer {
    #[serde(rename = "T")]
    pub t: usize,
    pub h_star: f64,
    pub nu: f64,
    pub variance_term: f64,
    pub bias_term: f64,
    pub total_error: f64,
    /// Step where the two terms cross, NaN without a crossing on the grid.
    pub crossing_h: f64,
    pub boundary: bool,
}

/// Allocation weight of one design point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRow {
    pub point: usize,
    pub x1: f64,
    pub x2: f64,
    /// Weight from the full solver, including its face search.
    pub eta: f64,
    /// Weight from exponentiated-gradient ascent alone, all positive.
    pub eta_interior: f64,
    pub count: usize,
}

/// Everything the gradient run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOutput {
    pub rows: Vec<GradientRow>,
    pub minimizers: Vec<GradientMinimizer>,
    /// Step size at which the allocation was optimized.
    pub design_h: f64,
    pub design: Vec<DesignRow>,
    /// `f_E` at the optimized and at the uniform allocation.
    pub design_value: f64,
    pub uniform_value: f64,
}

/// The offset finite-difference points
/// `{x, x + h e1, x + 2h e1, x - h e1, x - h e2}`.
pub fn offset_design_points(x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let shift = |i: usize, s: f64| {
        let mut p = x.to_vec();
        p[i] += s;
        p
    };
    vec![x.to_vec(), shift(0, h), shift(0, 2.0 * h), shift(0, -h), shift(1, -h)]
}

struct Setup {
    map: FeatureMap,
    c: LinearFunctional,
    x: Vec<f64>,
    v0: PriorOperator,
}

fn setup(cfg: &ScenarioConfig) -> Result<Setup> {
    let map = cfg.feature_map()?;
    if map.input_dim() < 2 {
        return Err(ScenarioError::Config("the offset design needs at least two input dimensions".into()));
    }
    let x = match &cfg.functional {
        Some(FunctionalSpec::Gradient { x }) => x.clone(),
        _ => return Err(ScenarioError::Config("the gradient scenario needs a gradient functional".into())),
    };
    let c = functionals::gradient_functional(&map, &x)?;
    let v0 = PriorOperator::identity(map.dim());
    Ok(Setup { map, c, x, v0 })
}

/// Base design at step `h`, as a support matrix.
fn support(s: &Setup, h: f64) -> oed_core::Result<DMatrix<f64>> {
    evaluate_design_matrix(&s.map, &offset_design_points(&s.x, h))
}

/// `W_dagger` of the uniformly weighted base design and its relative bias.
fn base_information(s: &Setup, h: f64) -> oed_core::Result<(InfoMatrix, f64, DMatrix<f64>)> {
    let xs = support(s, h)?;
    let n = xs.nrows();
    let weighted = &xs / (n as f64).sqrt();
    let w = estimators::weighted_info_matrix(&xs, &DVector::from_element(n, 1.0 / n as f64), &s.c, &s.v0, EstimatorKind::Interp, 1.0, 1.0)?;
    let nu = functionals::relative_bias(&s.c, &weighted, &s.v0)?;
    Ok((w, nu, weighted))
}

fn kernel_condition(weighted: &DMatrix<f64>) -> f64 {
    let sv = linalg::singular_values(weighted);
    let (hi, lo) = (sv[0], sv[sv.len() - 1]);
    if lo > 0.0 {
        (hi / lo).powi(2)
    } else {
        f64::INFINITY
    }
}

/// Sweeps the step size for every budget and optimizes the allocation at
/// the minimizer for `cfg.budget`.
pub fn run(cfg: &ScenarioConfig) -> Result<GradientOutput> {
    let p: &GradientParams = cfg.block(&cfg.gradient)?;
    let s = setup(cfg)?;
    let grid = geomspace(p.h_min, p.h_max, p.h_count);
    let mut rows = Vec::new();
    let mut minimizers = Vec::new();
    let mut budgets = p.budgets.clone();
    if !budgets.contains(&cfg.budget) {
        budgets.push(cfg.budget);
    }
    let family = |h: f64| base_information(&s, h).map(|(w, nu, _)| (w, nu));
    let mut design_h = None;
    for &t in &budgets {
        if t == 0 {
            return Err(ScenarioError::Config("budgets must be positive".into()));
        }
        let bal = design::balance_bias_variance(&family, &grid, cfg.sigma, cfg.lam, cfg.delta, t)?;
        for r in &bal.rows {
            let (_, _, weighted) = base_information(&s, r.h)?;
            let noise_sd = cfg.sigma / (t as f64).sqrt();
            let bound = estimators::residual_covariance_bound(&weighted, &s.c, &s.v0, cfg.lam, noise_sd, EstimatorKind::Interp)?;
            rows.push(GradientRow {
                t,
                h: r.h,
                nu: r.nu,
                variance_term: r.variance_term,
                bias_term: r.bias_term,
                total_error: r.total,
                residual_max_eig: linalg::max_eig(&bound),
                flagged: kernel_condition(&weighted) > FLAG_COND,
            });
        }
        let best = &bal.rows[bal.index];
        if t == cfg.budget {
            design_h = Some(bal.h_star);
        }
        if p.budgets.contains(&t) {
            minimizers.push(GradientMinimizer {
                t,
                h_star: bal.h_star,
                nu: best.nu,
                variance_term: best.variance_term,
                bias_term: best.bias_term,
                total_error: best.total,
                crossing_h: bal.crossing.unwrap_or(f64::NAN),
                boundary: bal.boundary,
            });
        }
    }
    rows.retain(|r| p.budgets.contains(&r.t));
    let design_h = design_h.expect("the design budget is always swept");
    let (design, design_value, uniform_value) = allocate(cfg, p, &s, design_h)?;
    Ok(GradientOutput { rows, minimizers, design_h, design, design_value, uniform_value })
}

/// E-optimal allocation of the interpolation estimator over the five
/// points at step `h`, with the optimized and uniform objective values.
pub fn allocation_at(cfg: &ScenarioConfig, h: f64) -> Result<(Vec<DesignRow>, f64, f64)> {
    let p = cfg.block(&cfg.gradient)?;
    let s = setup(cfg)?;
    allocate(cfg, p, &s, h)
}

fn allocate(cfg: &ScenarioConfig, p: &GradientParams, s: &Setup, h: f64) -> Result<(Vec<DesignRow>, f64, f64)> {
    let xs = support(s, h)?;
    let obj = DesignObjective::new(Criterion::E, EstimatorKind::Interp, s.c.clone(), cfg.lam, cfg.sigma, s.v0.clone());
    let res = design::mirror_descent_design(&obj, &xs, p.md_iters, p.md_step)?;
    let interior = design::mirror_descent_interior(&obj, &xs, p.md_iters, p.md_step)?;
    let n = xs.nrows();
    let uniform = obj.value_unnormalized(&xs, &DVector::from_element(n, 1.0 / n as f64));
    let rounded = design::round_allocation(&res.allocation, cfg.budget)?;
    let counts = rounded.counts.unwrap_or_default();
    let pts = offset_design_points(&s.x, h);
    let rows = (0..n)
        .map(|i| DesignRow { point: i, x1: pts[i][0], x2: pts[i][1], eta: res.allocation.eta[i], eta_interior: interior.allocation.eta[i], count: counts.get(i).copied().unwrap_or(0) })
        .collect();
    Ok((rows, res.value, uniform))
}
