//! Versioned scenario configuration.
//!
//! A configuration file is a JSON object with `"schema": 1`. Fields that are
//! omitted take the scenario defaults; nested objects are merged field by
//! field, except tagged objects (those carrying a `"kind"` key), which
//! replace the default wholesale. Unknown fields are rejected.

use std::path::PathBuf;

use nalgebra::DMatrix;
use oed_core::features::{Domain, FeatureMap, FeatureSpec, Kernel};
use oed_core::functionals::{self, LinearFunctional};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, ScenarioError};

/// The only configuration schema understood by this version.
pub const SCHEMA_VERSION: u32 = 1;

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Gradient,
    Contamination,
    Pharma,
    Lyapunov,
    Ellipse,
    Coverage,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Gradient => "gradient",
            ScenarioKind::Contamination => "contamination",
            ScenarioKind::Pharma => "pharma",
            ScenarioKind::Lyapunov => "lyapunov",
            ScenarioKind::Ellipse => "ellipse",
            ScenarioKind::Coverage => "coverage",
        }
    }
}

/// Serializable description of the target functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    /// Point evaluations at the listed inputs.
    Evaluation { points: Vec<Vec<f64>> },
    /// Gradient at `x`.
    Gradient { x: Vec<f64> },
    /// Selected coefficients.
    Selector { keep: Vec<usize> },
    /// All coefficients.
    Identity,
}

impl FunctionalSpec {
    /// Builds the functional on coefficient vectors of length `m`; the map is
    /// required for evaluation and gradient functionals.
    pub fn build(&self, map: Option<&FeatureMap>, m: usize) -> Result<LinearFunctional> {
        let need_map = || map.ok_or_else(|| ScenarioError::Config("this functional needs a feature map".into()));
        Ok(match self {
            FunctionalSpec::Evaluation { points } => functionals::evaluation_functional(need_map()?, points)?,
            FunctionalSpec::Gradient { x } => functionals::gradient_functional(need_map()?, x)?,
            FunctionalSpec::Selector { keep } => functionals::contamination_selector(keep, m)?,
            FunctionalSpec::Identity => LinearFunctional::new(DMatrix::identity(m, m), "identity")?,
        })
    }
}

/// Observation noise distribution, scaled to standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`, which is
    /// `sigma`-sub-Gaussian.
    Uniform,
}

/// Finite-difference step sweep and allocation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientParams {
    pub h_min: f64,
    pub h_max: f64,
    pub h_count: usize,
    pub budgets: Vec<usize>,
    pub md_iters: usize,
    pub md_step: f64,
}

/// Linear trend with oscillating contamination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationParams {
    pub n_candidates: usize,
    pub frequencies: usize,
    pub budgets: Vec<usize>,
    pub seeds: usize,
    pub alpha: f64,
    /// Multiplies the contamination coefficients; zero removes it.
    pub contamination_scale: f64,
    pub md_iters: usize,
    pub md_step: f64,
}

/// Two-compartment pharmacokinetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PharmaParams {
    pub gamma_true: Vec<f64>,
    pub gamma_box: Vec<[f64; 2]>,
    pub gamma_grid_per_axis: usize,
    pub t_end: f64,
    pub n_candidates: usize,
    pub collocation_points: usize,
    pub sample_counts: Vec<usize>,
    pub seeds: usize,
    pub rk4_steps: usize,
    pub c_dose: f64,
    pub nm_max_iter: usize,
}

/// Stability certification around a circular reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    pub half_width: f64,
    pub gain: f64,
    pub tube_width: f64,
    pub tube_angles: usize,
    pub tube_offsets: usize,
    pub sampling_interval: f64,
    pub initial_points: usize,
    pub seeds: usize,
    pub candidate_per_axis: usize,
    pub fit_per_axis: usize,
    pub fit_lam: f64,
    /// Relative singular-value cutoff for the tube functional basis.
    pub basis_tol: f64,
}

/// Two-dimensional interval comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseParams {
    pub theta: Vec<f64>,
}

/// Which confidence construction a coverage study exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    FixedInterp,
    FixedRidge,
    Adaptive,
}

/// Monte Carlo coverage study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageParams {
    pub kinds: Vec<SetKind>,
    pub replicas_fixed: usize,
    pub replicas_adaptive: usize,
    pub steps: usize,
    pub noise: NoiseKind,
    pub n_design: usize,
    pub repetitions: usize,
    pub n_candidates: usize,
}

/// Resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub features: Option<FeatureSpec>,
    pub functional: Option<FunctionalSpec>,
    pub sigma: f64,
    pub lam: f64,
    pub delta: f64,
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<ContaminationParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pharma: Option<PharmaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipse: Option<EllipseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn cube(d: usize, lo: f64, hi: f64) -> Domain {
    Domain { lo: vec![lo; d], hi: vec![hi; d] }
}

impl ScenarioConfig {
    /// Default configuration of a scenario.
    pub fn defaults(kind: ScenarioKind) -> Self {
        let base = ScenarioConfig {
            schema: SCHEMA_VERSION,
            scenario: kind,
            seed: 0,
            features: None,
            functional: None,
            sigma: 0.1,
            lam: 1.0,
            delta: 0.1,
            budget: 100,
            gradient: None,
            contamination: None,
            pharma: None,
            lyapunov: None,
            ellipse: None,
            coverage: None,
            output_dir: None,
        };
        match kind {
            ScenarioKind::Gradient => ScenarioConfig {
                features: Some(FeatureSpec::Qff { lengthscale: 0.1, m: 256, domain: cube(2, -1.0, 1.0) }),
                functional: Some(FunctionalSpec::Gradient { x: vec![0.0, 0.0] }),
                sigma: 0.01,
                budget: 10_000,
                gradient: Some(GradientParams {
                    h_min: 1e-3,
                    h_max: 0.3,
                    h_count: 80,
                    budgets: vec![100, 1_000, 10_000],
                    md_iters: 2_000,
                    md_step: 1.0,
                }),
                ..base
            },
            ScenarioKind::Contamination => ScenarioConfig {
                functional: Some(FunctionalSpec::Selector { keep: vec![0] }),
                sigma: 0.5,
                lam: 0.01,
                budget: 200,
                contamination: Some(ContaminationParams {
                    n_candidates: 201,
                    frequencies: 16,
                    budgets: vec![10, 20, 50, 100, 200],
                    seeds: 500,
                    alpha: 1.0,
                    contamination_scale: 1.0,
                    md_iters: 500,
                    md_step: 1.0,
                }),
                ..base
            },
            ScenarioKind::Pharma => ScenarioConfig {
                features: Some(FeatureSpec::Qff { lengthscale: 0.05, m: 128, domain: cube(1, 0.0, 1.0) }),
                sigma: 0.01,
                lam: 0.5,
                budget: 40,
                pharma: Some(PharmaParams {
                    gamma_true: vec![5.0, 10.0, 10.0],
                    gamma_box: vec![[4.0, 6.0], [9.0, 11.0], [9.0, 11.0]],
                    gamma_grid_per_axis: 3,
                    t_end: 1.0,
                    n_candidates: 101,
                    collocation_points: 200,
                    sample_counts: vec![6, 10, 20, 40],
                    seeds: 1000,
                    rk4_steps: 2_000,
                    c_dose: 1.0,
                    nm_max_iter: 2_000,
                }),
                ..base
            },
            ScenarioKind::Lyapunov => ScenarioConfig {
                features: Some(FeatureSpec::NystromGrid {
                    kernel: Kernel::SquaredExponential { lengthscale: 0.25 },
                    domain: cube(2, -1.5, 1.5),
                    per_axis: 20,
                }),
                sigma: 0.05,
                lam: 1.0,
                budget: 500,
                lyapunov: Some(LyapunovParams {
                    half_width: 1.5,
                    gain: 200.0,
                    tube_width: 0.01,
                    tube_angles: 200,
                    tube_offsets: 3,
                    sampling_interval: 1e-3,
                    initial_points: 10,
                    seeds: 10,
                    candidate_per_axis: 41,
                    fit_per_axis: 61,
                    fit_lam: 1e-6,
                    basis_tol: 1e-8,
                }),
                ..base
            },
            ScenarioKind::Ellipse => ScenarioConfig {
                features: Some(FeatureSpec::Linear { d: 2 }),
                functional: Some(FunctionalSpec::Selector { keep: vec![0] }),
                sigma: 1.0,
                budget: 50,
                ellipse: Some(EllipseParams { theta: vec![0.0, 0.0] }),
                ..base
            },
            ScenarioKind::Coverage => ScenarioConfig {
                features: Some(FeatureSpec::Qff { lengthscale: 0.5, m: 16, domain: cube(1, -1.0, 1.0) }),
                functional: Some(FunctionalSpec::Evaluation { points: vec![vec![0.1]] }),
                sigma: 0.1,
                budget: 200,
                coverage: Some(CoverageParams {
                    kinds: vec![SetKind::FixedInterp, SetKind::FixedRidge, SetKind::Adaptive],
                    replicas_fixed: 2_000,
                    replicas_adaptive: 1_000,
                    steps: 200,
                    noise: NoiseKind::Gaussian,
                    n_design: 8,
                    repetitions: 4,
                    n_candidates: 41,
                }),
                ..base
            },
        }
    }

    /// Resolves a user-supplied JSON document against the defaults of its
    /// scenario. `fallback` names the scenario when the document omits it.
    pub fn resolve(user: &Value, fallback: Option<ScenarioKind>) -> Result<Self> {
        let obj = user.as_object().ok_or_else(|| ScenarioError::Config("configuration must be a JSON object".into()))?;
        match obj.get("schema") {
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            Some(v) => return Err(ScenarioError::Config(format!("unsupported schema {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(ScenarioError::Config("missing \"schema\" field".into())),
        }
        let kind = match (obj.get("scenario"), fallback) {
            (Some(v), fb) => {
                let k: ScenarioKind = serde_json::from_value(v.clone())?;
                if let Some(fb) = fb {
                    if fb != k {
                        return Err(ScenarioError::Config(format!(
                            "configuration is for scenario {}, command line asks for {}",
                            k.name(),
                            fb.name()
                        )));
                    }
                }
                k
            }
            (None, Some(fb)) => fb,
            (None, None) => return Err(ScenarioError::Config("missing \"scenario\" field".into())),
        };
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        merge(&mut merged, user);
        if let Some(m) = merged.as_object_mut() {
            m.insert("scenario".into(), serde_json::to_value(kind)?);
        }
        let cfg: ScenarioConfig = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks ranges that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Config(format!("unsupported schema {}", self.schema)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ScenarioError::Config("sigma must be finite and non-negative".into()));
        }
        if !(self.lam > 0.0 && self.lam.is_finite()) {
            return Err(ScenarioError::Config("lam must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ScenarioError::Config("delta must lie in (0, 1)".into()));
        }
        let block_present = match self.scenario {
            ScenarioKind::Gradient => self.gradient.is_some(),
            ScenarioKind::Contamination => self.contamination.is_some(),
            ScenarioKind::Pharma => self.pharma.is_some(),
            ScenarioKind::Lyapunov => self.lyapunov.is_some(),
            ScenarioKind::Ellipse => self.ellipse.is_some(),
            ScenarioKind::Coverage => self.coverage.is_some(),
        };
        if !block_present {
            return Err(ScenarioError::Config(format!("missing \"{}\" block", self.scenario.name())));
        }
        Ok(())
    }

    /// The feature map, which must be configured.
    pub fn feature_map(&self) -> Result<FeatureMap> {
        let spec = self.features.as_ref().ok_or_else(|| ScenarioError::Config("missing \"features\"".into()))?;
        Ok(spec.build()?)
    }

    /// The scenario block, or an error naming it.
    pub fn block<'a, T>(&'a self, field: &'a Option<T>) -> Result<&'a T> {
        field.as_ref().ok_or_else(|| ScenarioError::Config(format!("missing \"{}\" block", self.scenario.name())))
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let tagged = v.as_object().is_some_and(|m| m.contains_key("kind"));
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() && !tagged => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
