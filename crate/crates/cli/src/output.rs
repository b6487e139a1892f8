use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::Outcome;

pub const RESULTS: &str = "results.json";
pub const CSV: &str = "results.csv";
pub const MANIFEST: &str = "manifest.json";

pub fn version() -> &'static str {
    env!("CLT_LAB_VERSION")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes the three artifacts into `dir`, creating it if needed.
pub fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &Outcome,
    wall_secs: f64,
    threads: usize,
) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_json(&dir.join(RESULTS), &outcome.results)?;

    let csv_path = dir.join(CSV);
    let mut w =
        csv::Writer::from_path(&csv_path).map_err(|e| CliError::Other(format!("{}: {e}", csv_path.display())))?;
    let csv_err = |e: csv::Error| CliError::Other(format!("{}: {e}", csv_path.display()));
    w.write_record(&outcome.csv.header).map_err(csv_err)?;
    for row in &outcome.csv.rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;

    let manifest = json!({
        "version": version(),
        "experiment": cfg.kind,
        "name": cfg.name,
        "config": cfg.echo,
        "wall_time_secs": wall_secs,
        "threads": threads,
    });
    write_json(&dir.join(MANIFEST), &manifest)
}
