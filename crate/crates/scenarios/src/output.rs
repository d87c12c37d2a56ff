//! CSV tables and the `meta.json` run record.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::Result;

/// Writes `rows` to `dir/name` with a header derived from the row type.
pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path)
}

/// Writes `value` to `dir/name` as pretty-printed JSON.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)?)?;
    Ok(path)
}

/// Commit of the working tree, or `"unknown"` outside a repository.
pub fn git_hash() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Serialize)]
struct Meta<'a> {
    config: &'a ScenarioConfig,
    git_hash: String,
    runtime_seconds: f64,
    outputs: Vec<String>,
    version: &'static str,
}

/// Writes `dir/meta.json` with the resolved configuration.
pub fn write_meta(dir: &Path, cfg: &ScenarioConfig, runtime_seconds: f64, outputs: &[PathBuf]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        config: cfg,
        git_hash: git_hash(),
        runtime_seconds,
        outputs: outputs.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    Ok(path)
}
