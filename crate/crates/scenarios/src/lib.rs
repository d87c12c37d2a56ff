//! Scenario runners for bias-aware experimental design: finite-difference
//! gradients, contamination-aware regression, pharmacokinetic trajectories,
//! Lyapunov certification, interval comparisons and coverage studies.
//!
//! Each runner takes a resolved [`config::ScenarioConfig`] and returns typed
//! tables; [`execute`] writes them as CSV files next to a `meta.json`.

pub mod config;
pub mod contamination;
pub mod coverage;
pub mod ellipse;
pub mod error;
pub mod gradient;
pub mod lyapunov;
pub mod numerics;
pub mod output;
pub mod pharma;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ScenarioConfig, ScenarioKind};
pub use error::{Result, ScenarioError};

/// Tables produced by one run.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioOutput {
    Gradient(gradient::GradientOutput),
    Contamination(contamination::ContaminationOutput),
    Pharma(pharma::PharmaOutput),
    Lyapunov(lyapunov::LyapunovOutput),
    Ellipse(Vec<ellipse::IntervalRow>),
    Coverage(coverage::CoverageOutput),
}

impl ScenarioOutput {
    /// Writes every table of the run into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        match self {
            ScenarioOutput::Gradient(o) => {
                files.push(output::write_csv(dir, "gradient.csv", &o.rows)?);
                files.push(output::write_csv(dir, "gradient_minimizers.csv", &o.minimizers)?);
                files.push(output::write_csv(dir, "gradient_design.csv", &o.design)?);
            }
            ScenarioOutput::Contamination(o) => {
                files.push(output::write_csv(dir, "contamination.csv", &o.rows)?);
                files.push(output::write_csv(dir, "contamination_design.csv", &o.designs)?);
            }
            ScenarioOutput::Pharma(o) => {
                files.push(output::write_csv(dir, "pharma.csv", &o.rows)?);
                files.push(output::write_json(dir, "pharma_design.json", &o.designs)?);
            }
            ScenarioOutput::Lyapunov(o) => {
                files.push(output::write_csv(dir, "lyapunov.csv", &o.rows)?);
                files.push(output::write_csv(dir, "lyapunov_summary.csv", &o.summary)?);
            }
            ScenarioOutput::Ellipse(rows) => {
                files.push(output::write_csv(dir, "ellipse.csv", rows)?);
            }
            ScenarioOutput::Coverage(o) => {
                files.push(output::write_csv(dir, "coverage_replicas.csv", &o.replicas)?);
                files.push(output::write_csv(dir, "coverage.csv", &o.summary)?);
            }
        }
        Ok(files)
    }
}

/// Runs the configured scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    Ok(match cfg.scenario {
        ScenarioKind::Gradient => ScenarioOutput::Gradient(gradient::run(cfg)?),
        ScenarioKind::Contamination => ScenarioOutput::Contamination(contamination::run(cfg)?),
        ScenarioKind::Pharma => ScenarioOutput::Pharma(pharma::run(cfg)?),
        ScenarioKind::Lyapunov => ScenarioOutput::Lyapunov(lyapunov::run(cfg)?),
        ScenarioKind::Ellipse => ScenarioOutput::Ellipse(ellipse::run(cfg)?),
        ScenarioKind::Coverage => ScenarioOutput::Coverage(coverage::run(cfg)?),
    })
}

/// Runs the scenario and writes its tables and `meta.json` into `dir`.
pub fn execute(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let out = run(cfg)?;
    let mut files = out.write(dir)?;
    files.push(output::write_meta(dir, cfg, start.elapsed().as_secs_f64(), &files)?);
    Ok(files)
}
