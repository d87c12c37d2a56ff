//! Error type of the scenario runners.

use thiserror::Error;

/// Failures while configuring, running or writing a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] oed_core::OedError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("numerical: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;
