//! Monte Carlo coverage of the three confidence constructions: fixed-design
//! interpolation, fixed-design ridge and the anytime adaptive set under a
//! data-dependent query rule.

use nalgebra::{DMatrix, DVector};
use oed_core::confidence;
use oed_core::estimators::{self, Dataset, InfoKind, InfoMatrix};
use oed_core::features::{evaluate_design_matrix, PriorOperator};
use oed_core::functionals::{self, LinearFunctional};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CoverageParams, NoiseKind, ScenarioConfig, SetKind};
use crate::error::{Result, ScenarioError};
use crate::numerics::{linspace, noise, stream_rng};

/// Exploration weight of the upper-confidence query rule.
const UCB_WEIGHT: f64 = 2.0;

/// One replica of one construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaRow {
    pub set_kind: SetKind,
    pub replica: usize,
    /// `|C theta_hat - C theta|` in the set's metric; for the adaptive set,
    /// at the step where its ratio to the radius is largest.
    pub deviation: f64,
    pub radius: f64,
    pub covered: bool,
}

/// Empirical coverage of one construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub set_kind: SetKind,
    pub delta: f64,
    pub noise: NoiseKind,
    pub replicas: usize,
    pub coverage: f64,
    /// Binomial standard error of `coverage`.
    pub coverage_se: f64,
}

/// Everything the coverage run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageOutput {
    pub replicas: Vec<ReplicaRow>,
    pub summary: Vec<CoverageSummary>,
}

/// A coefficient vector on the boundary of the prior ball `|theta|^2 = 1/lambda`.
fn draw_theta(rng: &mut impl rand::Rng, m: usize, lam: f64) -> DVector<f64> {
    let g: DVector<f64> = DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(rng)));
    let n = g.norm();
    g / (n * lam.sqrt())
}

fn responses(x: &DMatrix<f64>, theta: &DVector<f64>, rng: &mut impl rand::Rng, sigma: f64, kind: NoiseKind) -> DVector<f64> {
    let clean = x * theta;
    DVector::from_iterator(clean.len(), clean.iter().map(|v| v + noise(rng, sigma, kind)))
}

struct Problem {
    c: LinearFunctional,
    v0: PriorOperator,
    m: usize,
    /// Fixed design with every point repeated.
    fixed_x: DMatrix<f64>,
    candidates: DMatrix<f64>,
}

fn fixed_replica(pr: &Problem, cfg: &ScenarioConfig, p: &CoverageParams, kind: SetKind, r: usize, ki: usize) -> Result<ReplicaRow> {
    let mut rng = stream_rng(cfg.seed, ((ki as u64) << 32) + r as u64);
    let theta = draw_theta(&mut rng, pr.m, cfg.lam);
    let y = responses(&pr.fixed_x, &theta, &mut rng, cfg.sigma, p.noise);
    let ds = Dataset::new(pr.fixed_x.clone(), y, cfg.sigma, pr.v0.clone(), Some(cfg.lam), Some(theta.clone()))?;
    let truth = pr.c.matrix() * &theta;
    let e = match kind {
        SetKind::FixedInterp => {
            let w = estimators::info_matrix_interp(&pr.fixed_x, &pr.c, &pr.v0)?;
            let nu = functionals::relative_bias(&pr.c, &pr.fixed_x, &pr.v0)?;
            confidence::fixed_interp_ellipsoid(estimators::interpolate(&ds, &pr.c)?, &w, nu, cfg.lam, cfg.sigma, p.repetitions, cfg.delta)?
        }
        SetKind::FixedRidge => {
            let w = estimators::info_matrix_ridge(&pr.fixed_x, &pr.c, &pr.v0, cfg.lam, cfg.sigma)?;
            confidence::fixed_ridge_ellipsoid(estimators::ridge(&ds, &pr.c)?, &w, cfg.delta)?
        }
        SetKind::Adaptive => unreachable!("adaptive replicas run sequentially"),
    };
    let deviation = e.deviation(&truth);
    Ok(ReplicaRow { set_kind: kind, replica: r, deviation, radius: e.radius, covered: deviation <= e.radius })
}

/// Sequential run: each query maximizes `phi^T theta_hat + w sqrt(phi^T V^{-1} phi)`
/// over the candidates, and the set must hold at every step.
fn adaptive_replica(pr: &Problem, cfg: &ScenarioConfig, p: &CoverageParams, r: usize, ki: usize) -> Result<ReplicaRow> {
    let mut rng = stream_rng(cfg.seed, ((ki as u64) << 32) + r as u64);
    let theta = draw_theta(&mut rng, pr.m, cfg.lam);
    let truth = pr.c.matrix() * &theta;
    let pd = functionals::project_data(&pr.candidates, &pr.c, &pr.v0)?;
    let s2 = cfg.sigma * cfg.sigma;
    let mut v_inv = DMatrix::identity(pr.m, pr.m) / cfg.lam;
    let mut b = DVector::zeros(pr.m);
    let mut omega = &pd.s * cfg.lam;
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut covered = true;
    for _ in 0..p.steps {
        let theta_hat = &v_inv * &b;
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..pr.candidates.nrows() {
            let phi = pr.candidates.row(i).transpose();
            let score = phi.dot(&theta_hat) + UCB_WEIGHT * phi.dot(&(&v_inv * &phi)).max(0.0).sqrt();
            if score > best.1 {
                best = (i, score);
            }
        }
        let phi = pr.candidates.row(best.0).transpose();
        let y = phi.dot(&theta) + noise(&mut rng, cfg.sigma, p.noise);
        let u = &v_inv * &phi;
        let den = s2 + phi.dot(&u);
        v_inv.ger(-1.0 / den, &u, &u, 1.0);
        b.axpy(y / s2, &phi, 1.0);
        let z = pd.z.row(best.0).transpose();
        omega.ger(1.0 / s2, &z, &z, 1.0);

        let center = pr.c.matrix() * (&v_inv * &b);
        let metric = InfoMatrix { matrix: omega.clone(), kind: InfoKind::AdaptiveOmega };
        let e = confidence::adaptive_ellipsoid(center, &metric, &pd.s, cfg.lam, cfg.delta)?;
        let dev = e.deviation(&truth);
        covered &= dev <= e.radius;
        if dev / e.radius > worst.0 {
            worst = (dev / e.radius, dev, e.radius);
        }
    }
    Ok(ReplicaRow { set_kind: SetKind::Adaptive, replica: r, deviation: worst.1, radius: worst.2, covered })
}

/// Runs every configured construction.
pub fn run(cfg: &ScenarioConfig) -> Result<CoverageOutput> {
    let p: &CoverageParams = cfg.block(&cfg.coverage)?;
    if p.n_design == 0 || p.repetitions == 0 || p.n_candidates == 0 || p.steps == 0 {
        return Err(ScenarioError::Config("coverage needs a non-empty design, candidates and steps".into()));
    }
    let map = cfg.feature_map()?;
    if map.input_dim() != 1 {
        return Err(ScenarioError::Config("coverage uses a one-dimensional input domain".into()));
    }
    let m = map.dim();
    let c = cfg.functional.as_ref().ok_or_else(|| ScenarioError::Config("a functional is required".into()))?.build(Some(&map), m)?;
    let dom = map.domain().ok_or_else(|| ScenarioError::Config("coverage needs a feature map with a bounded domain".into()))?;
    let (lo, hi) = (dom.lo[0], dom.hi[0]);
    let design: Vec<Vec<f64>> = linspace(lo, hi, p.n_design).into_iter().flat_map(|x| std::iter::repeat_n(vec![x], p.repetitions)).collect();
    let cands: Vec<Vec<f64>> = linspace(lo, hi, p.n_candidates).into_iter().map(|x| vec![x]).collect();
    let pr = Problem {
        c,
        v0: PriorOperator::identity(m),
        m,
        fixed_x: evaluate_design_matrix(&map, &design)?,
        candidates: evaluate_design_matrix(&map, &cands)?,
    };

    let mut replicas = Vec::new();
    let mut summary = Vec::new();
    for (ki, &kind) in p.kinds.iter().enumerate() {
        let n = if kind == SetKind::Adaptive { p.replicas_adaptive } else { p.replicas_fixed };
        let rows = (0..n)
            .into_par_iter()
            .map(|r| match kind {
                SetKind::Adaptive => adaptive_replica(&pr, cfg, p, r, ki),
                _ => fixed_replica(&pr, cfg, p, kind, r, ki),
            })
            .collect::<Result<Vec<_>>>()?;
        let cov = rows.iter().filter(|r| r.covered).count() as f64 / n.max(1) as f64;
        summary.push(CoverageSummary {
            set_kind: kind,
            delta: cfg.delta,
            noise: p.noise,
            replicas: n,
            coverage: cov,
            coverage_se: (cov * (1.0 - cov) / n.max(1) as f64).sqrt(),
        });
        replicas.extend(rows);
    }
    Ok(CoverageOutput { replicas, summary })
}
