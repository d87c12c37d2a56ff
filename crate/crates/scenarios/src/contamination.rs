//! Linear trend under oscillating contamination: estimate the slope `alpha`
//! of `y = alpha x + f(x) + noise`, where `f` is a sum of damped sinusoids of
//! unknown amplitude, and compare three designs by the Monte Carlo error of
//! the ridge estimate of `alpha`.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use oed_core::design::{self, Criterion, DesignObjective};
use oed_core::estimators::{self, EstimatorKind};
use oed_core::features::PriorOperator;
use oed_core::functionals::{self, LinearFunctional};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ContaminationParams, NoiseKind, ScenarioConfig};
use crate::error::{Result, ScenarioError};
use crate::numerics::{counts_for_budget, linspace, noise, stream_rng};

/// Design families compared by the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Optimized for the slope alone, accounting for the contamination.
    Aware,
    /// Optimized for every coefficient of the model.
    Full,
    /// Uniform random inputs.
    Random,
}

impl DesignKind {
    pub const ALL: [DesignKind; 3] = [DesignKind::Aware, DesignKind::Full, DesignKind::Random];
}

/// Mean squared error of the slope estimate for one budget and design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContaminationRow {
    pub budget: usize,
    pub design_kind: DesignKind,
    pub mse: f64,
    /// Standard error of `mse` over the seeds.
    pub mse_se: f64,
    /// Exact expectation of the squared error over noise and contamination
    /// draws (prior-ball shrinkage ignored), averaged over the seeds' designs.
    pub expected_mse: f64,
    pub seeds: usize,
}

/// Query counts of an optimized design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContaminationDesignRow {
    pub budget: usize,
    pub design_kind: DesignKind,
    pub x: f64,
    pub count: usize,
}

/// Everything the contamination run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationOutput {
    pub rows: Vec<ContaminationRow>,
    pub designs: Vec<ContaminationDesignRow>,
}

/// Features `(x, cos(pi l x)/l^2, sin(pi l x)/l^2, cos(pi e l x)/l^2,
/// sin(pi e l x)/l^2 for l = 1..=frequencies)`; the first coefficient is
/// the slope.
pub fn features(x: f64, frequencies: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + 4 * frequencies);
    v.push(x);
    for l in 1..=frequencies {
        let lf = l as f64;
        let w = 1.0 / (lf * lf);
        for freq in [PI * lf, PI * E * lf] {
            v.push((freq * x).cos() * w);
            v.push((freq * x).sin() * w);
        }
    }
    v
}

fn design_matrix(xs: &[f64], frequencies: usize) -> DMatrix<f64> {
    let m = 1 + 4 * frequencies;
    let mut out = DMatrix::zeros(xs.len(), m);
    for (i, &x) in xs.iter().enumerate() {
        out.set_row(i, &DVector::from_vec(features(x, frequencies)).transpose());
    }
    out
}

/// Greedy design followed by mirror-descent reweighting of its support.
/// Returns integer counts over the candidates summing to `budget`.
fn optimized_counts(
    criterion: Criterion,
    c: LinearFunctional,
    cands: &DMatrix<f64>,
    cfg: &ScenarioConfig,
    p: &ContaminationParams,
    budget: usize,
) -> Result<Vec<usize>> {
    let v0 = PriorOperator::identity(cands.ncols());
    let obj = DesignObjective::new(criterion, EstimatorKind::Ridge, c, cfg.lam, cfg.sigma, v0).with_scale(budget as f64);
    let greedy = design::greedy_design(&obj, cands, budget, &[])?;
    let g_counts = greedy.allocation.counts.expect("greedy returns counts");
    let supp: Vec<usize> = (0..cands.nrows()).filter(|&i| g_counts[i] > 0).collect();
    let sub = cands.select_rows(&supp);
    let md = design::mirror_descent_design(&obj, &sub, p.md_iters, p.md_step)?;
    // Keep the greedy counts when reweighting does not improve on them.
    let md_counts = counts_for_budget(md.allocation.eta.as_slice(), budget);
    let mut full = vec![0usize; cands.nrows()];
    if design::count_design_value(&obj, &sub, &md_counts) >= design::count_design_value(&obj, cands, &g_counts) {
        for (k, &i) in supp.iter().enumerate() {
            full[i] = md_counts[k];
        }
    } else {
        full = g_counts;
    }
    Ok(full)
}

fn expand(counts: &[usize], xs: &[f64]) -> Vec<f64> {
    counts.iter().zip(xs).flat_map(|(&c, &x)| std::iter::repeat_n(x, c)).collect()
}

/// Draws the true coefficients for one seed: slope `alpha`, contamination
/// amplitudes standard normal times `scale`, shrunk onto the prior ball
/// `|theta|^2 <= 1/lambda` when needed.
pub fn draw_theta(rng: &mut impl Rng, m: usize, alpha: f64, scale: f64, lam: f64) -> DVector<f64> {
    let mut theta = DVector::zeros(m);
    theta[0] = alpha;
    for k in 1..m {
        let z: f64 = StandardNormal.sample(rng);
        theta[k] = z * scale;
    }
    let nsq = theta.norm_squared();
    if nsq > 1.0 / lam {
        theta *= (1.0 / lam / nsq).sqrt();
    }
    theta
}

/// `E (l^T y - alpha)^2` for the linear estimate `l^T y` when the
/// contamination amplitudes are independent with standard deviation `scale`.
fn expected_sq_error(op: &DMatrix<f64>, x: &DMatrix<f64>, alpha: f64, scale: f64, sigma: f64) -> f64 {
    let mut b = op * x;
    b[(0, 0)] -= 1.0;
    let bias_slope = (b[(0, 0)] * alpha).powi(2);
    let bias_rest: f64 = (1..b.ncols()).map(|k| b[(0, k)].powi(2)).sum::<f64>() * scale * scale;
    bias_slope + bias_rest + sigma * sigma * op.norm_squared()
}

/// Runs every design at every budget.
pub fn run(cfg: &ScenarioConfig) -> Result<ContaminationOutput> {
    let p: &ContaminationParams = cfg.block(&cfg.contamination)?;
    if p.n_candidates < 2 || p.seeds == 0 {
        return Err(ScenarioError::Config("contamination needs at least two candidates and one seed".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(ScenarioError::Config("contamination needs sigma > 0".into()));
    }
    let m = 1 + 4 * p.frequencies;
    let cand_x = linspace(-1.0, 1.0, p.n_candidates);
    let cands = design_matrix(&cand_x, p.frequencies);
    let v0 = PriorOperator::identity(m);
    let slope = functionals::contamination_selector(&[0], m)?;
    let identity = LinearFunctional::new(DMatrix::identity(m, m), "all coefficients")?;

    let thetas: Vec<DVector<f64>> = (0..p.seeds)
        .map(|s| draw_theta(&mut stream_rng(cfg.seed, s as u64), m, p.alpha, p.contamination_scale, cfg.lam))
        .collect();

    let mut rows = Vec::new();
    let mut designs = Vec::new();
    for (bi, &budget) in p.budgets.iter().enumerate() {
        if budget == 0 {
            return Err(ScenarioError::Config("budgets must be positive".into()));
        }
        let aware = optimized_counts(Criterion::E, slope.clone(), &cands, cfg, p, budget)?;
        let full = optimized_counts(Criterion::InverseTrace, identity.clone(), &cands, cfg, p, budget)?;
        for (kind, counts) in [(DesignKind::Aware, &aware), (DesignKind::Full, &full)] {
            for (i, &c) in counts.iter().enumerate() {
                if c > 0 {
                    designs.push(ContaminationDesignRow { budget, design_kind: kind, x: cand_x[i], count: c });
                }
            }
        }
        for kind in DesignKind::ALL {
            let fixed_x = match kind {
                DesignKind::Aware => Some(expand(&aware, &cand_x)),
                DesignKind::Full => Some(expand(&full, &cand_x)),
                DesignKind::Random => None,
            };
            let fixed_op = match &fixed_x {
                Some(xs) => Some(estimators::ridge_operator(&design_matrix(xs, p.frequencies), &slope, &v0, cfg.lam, cfg.sigma)?),
                None => None,
            };
            let errors: Vec<(f64, f64)> = thetas
                .par_iter()
                .enumerate()
                .map(|(s, theta)| -> Result<(f64, f64)> {
                    // Shared by all designs of this seed and budget, so the
                    // comparison uses common random numbers.
                    let stream = ((s as u64 + 1) << 20) + bi as u64;
                    let mut rng = stream_rng(cfg.seed, stream);
                    let xs = match &fixed_x {
                        Some(xs) => xs.clone(),
                        None => (0..budget).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                    };
                    let x = design_matrix(&xs, p.frequencies);
                    let op = match &fixed_op {
                        Some(op) => op.clone(),
                        None => estimators::ridge_operator(&x, &slope, &v0, cfg.lam, cfg.sigma)?,
                    };
                    let clean = &x * theta;
                    let y = DVector::from_iterator(budget, clean.iter().map(|v| v + noise(&mut rng, cfg.sigma, NoiseKind::Gaussian)));
                    let est = (&op * y)[0];
                    Ok(((est - theta[0]).powi(2), expected_sq_error(&op, &x, p.alpha, p.contamination_scale, cfg.sigma)))
                })
                .collect::<Result<Vec<_>>>()?;
            let expected_mse = errors.iter().map(|e| e.1).sum::<f64>() / errors.len() as f64;
            let errors: Vec<f64> = errors.into_iter().map(|e| e.0).collect();
            let n = errors.len() as f64;
            let mse = errors.iter().sum::<f64>() / n;
            let var = errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            rows.push(ContaminationRow { budget, design_kind: kind, mse, mse_se: (var / n).sqrt(), expected_mse, seeds: p.seeds });
        }
    }
    Ok(ContaminationOutput { rows, designs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_dimension_and_slope_entry() {
        let v = features(0.3, 16);
        assert_eq!(v.len(), 65);
        assert_eq!(v[0], 0.3);
        assert!((v[1] - (PI * 0.3).cos()).abs() < 1e-15);
        assert!((v[4] - (PI * E * 0.3).sin()).abs() < 1e-15);
    }

    #[test]
    fn theta_respects_prior_ball() {
        let mut rng = stream_rng(1, 0);
        let t = draw_theta(&mut rng, 65, 1.0, 10.0, 0.01);
        assert!(t.norm_squared() <= 100.0 + 1e-9);
    }
}
