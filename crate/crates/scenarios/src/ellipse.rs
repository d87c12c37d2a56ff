//! Intervals for one coordinate of a two-dimensional linear model: sets
//! built for the coordinate directly against two-dimensional sets projected
//! onto it, on the same data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use oed_core::confidence::{self, ConfidenceEllipsoid};
use oed_core::estimators::{self, Dataset};
use oed_core::features::{evaluate_design_matrix, PriorOperator};
use oed_core::functionals::{self, LinearFunctional};
use rand::Rng;
use serde::Serialize;

use crate::config::{EllipseParams, NoiseKind, ScenarioConfig};
use crate::error::{Result, ScenarioError};
use crate::numerics::{noise, stream_rng};

/// Which set an interval comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalSet {
    /// Fixed-design ridge set for the coordinate.
    OursFixed,
    /// Fixed-design ridge set for both coordinates, projected.
    ProjectedFixed,
    /// Anytime set for the coordinate.
    OursAdaptive,
    /// Anytime set for both coordinates, projected.
    ProjectedAdaptive,
    /// Regression on the projected data with the accumulated bias added.
    ProjectedBiased,
}

/// How the inputs were placed on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleDesign {
    /// Equally spaced angles.
    Equispaced,
    /// Uniformly random angles.
    Random,
}

/// One interval for the first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub set_kind: IntervalSet,
    pub design_kind: CircleDesign,
    pub interval_lo: f64,
    pub interval_hi: f64,
}

/// Interval of `e` along the first coordinate of the two-dimensional model.
fn first_coordinate(e: &ConfidenceEllipsoid) -> Result<(f64, f64)> {
    let mut u = DVector::zeros(e.center.len());
    u[0] = 1.0;
    Ok(confidence::interval(e, &u)?)
}

/// Runs both designs and emits every interval.
pub fn run(cfg: &ScenarioConfig) -> Result<Vec<IntervalRow>> {
    let p: &EllipseParams = cfg.block(&cfg.ellipse)?;
    let map = cfg.feature_map()?;
    if map.dim() != 2 || p.theta.len() != 2 {
        return Err(ScenarioError::Config("the interval comparison needs a two-dimensional linear model".into()));
    }
    if cfg.budget == 0 {
        return Err(ScenarioError::Config("budget must be positive".into()));
    }
    let c = cfg.functional.as_ref().ok_or_else(|| ScenarioError::Config("a functional is required".into()))?.build(Some(&map), 2)?;
    if c.p() != 1 {
        return Err(ScenarioError::Config("the interval comparison needs a single functional".into()));
    }
    let all = LinearFunctional::new(DMatrix::identity(2, 2), "both coordinates")?;
    let v0 = PriorOperator::identity(2);
    let theta = DVector::from_column_slice(&p.theta);
    let mut rows = Vec::new();
    for (k, design) in [CircleDesign::Equispaced, CircleDesign::Random].into_iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, k as u64);
        let angles: Vec<f64> = match design {
            CircleDesign::Equispaced => (0..cfg.budget).map(|i| 2.0 * PI * i as f64 / cfg.budget as f64).collect(),
            CircleDesign::Random => (0..cfg.budget).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
        };
        let pts: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
        let x = evaluate_design_matrix(&map, &pts)?;
        let clean = &x * &theta;
        let y = DVector::from_iterator(cfg.budget, clean.iter().map(|v| v + noise(&mut rng, cfg.sigma, NoiseKind::Gaussian)));
        let ds = Dataset::new(x.clone(), y.clone(), cfg.sigma, v0.clone(), Some(cfg.lam), Some(theta.clone()))?;
        let est_c = estimators::ridge(&ds, &c)?;
        let est_all = estimators::ridge(&ds, &all)?;

        let w_c = estimators::info_matrix_ridge(&x, &c, &v0, cfg.lam, cfg.sigma)?;
        let w_all = estimators::info_matrix_ridge(&x, &all, &v0, cfg.lam, cfg.sigma)?;
        let pd_c = functionals::project_data(&x, &c, &v0)?;
        let pd_all = functionals::project_data(&x, &all, &v0)?;
        let om_c = estimators::info_matrix_adaptive(&pd_c, cfg.lam, cfg.sigma);
        let om_all = estimators::info_matrix_adaptive(&pd_all, cfg.lam, cfg.sigma);
        let (_, biased) = confidence::projected_biased_adaptive(&pd_c, &y, 1.0 / cfg.lam.sqrt(), cfg.lam, cfg.sigma, cfg.delta)?;

        let sets = [
            (IntervalSet::OursFixed, confidence::fixed_ridge_ellipsoid(est_c.clone(), &w_c, cfg.delta)?),
            (IntervalSet::ProjectedFixed, confidence::fixed_ridge_ellipsoid(est_all.clone(), &w_all, cfg.delta)?),
            (IntervalSet::OursAdaptive, confidence::adaptive_ellipsoid(est_c, &om_c, &pd_c.s, cfg.lam, cfg.delta)?),
            (IntervalSet::ProjectedAdaptive, confidence::adaptive_ellipsoid(est_all, &om_all, &pd_all.s, cfg.lam, cfg.delta)?),
            (IntervalSet::ProjectedBiased, biased),
        ];
        for (kind, e) in sets {
            let (lo, hi) = first_coordinate(&e)?;
            rows.push(IntervalRow { set_kind: kind, design_kind: design, interval_lo: lo, interval_hi: hi });
        }
    }
    Ok(rows)
}
