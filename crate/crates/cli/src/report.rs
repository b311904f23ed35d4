//! Results files: metrics CSV, summary JSON, ablation tables.
//!
//! CSV files start with a `# manifest <hash>` comment line ahead of the header.

use std::io::Write;
use std::path::Path;

use hosp_core::trainer::{AblationRow, MetricRow, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const METRICS_HEADER: [&str; 4] = ["iter", "loss", "val_acc", "val_ci"];
pub const ABLATION_HEADER: [&str; 5] = ["value", "accuracy", "ci", "best_iter", "val_acc"];

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

/// The header is written explicitly so an empty table still has one.
fn write_csv<R: Serialize>(path: &Path, manifest_hash: &str, header: &[&str], rows: &[R]) -> CliResult<()> {
    let mut buf = format!("# manifest {manifest_hash}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(header).map_err(|e| io_err(path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Rows and the embedded manifest hash.
fn read_csv<R: DeserializeOwned>(path: &Path) -> CliResult<(String, Vec<R>)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# manifest "))
        .ok_or_else(|| io_err(path, "missing `# manifest` line"))?
        .to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<Result<Vec<R>, _>>().map_err(|e| io_err(path, e))?;
    Ok((hash, rows))
}

/// Writes `iter,loss,val_acc,val_ci`; floats use shortest round-trip formatting.
pub fn write_metrics(path: &Path, manifest_hash: &str, rows: &[MetricRow]) -> CliResult<()> {
    write_csv(path, manifest_hash, &METRICS_HEADER, rows)
}

pub fn read_metrics(path: &Path) -> CliResult<(String, Vec<MetricRow>)> {
    read_csv(path)
}

pub fn write_ablation_csv(path: &Path, manifest_hash: &str, rows: &[AblationRow]) -> CliResult<()> {
    write_csv(path, manifest_hash, &ABLATION_HEADER, rows)
}

pub fn read_ablation_csv(path: &Path) -> CliResult<(String, Vec<AblationRow>)> {
    read_csv(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: TrainConfig,
    pub best_iter: u64,
    pub best_val_acc: f64,
    pub iterations_run: usize,
    /// `None` when no test split was given.
    pub test_acc: Option<f64>,
    pub test_ci: Option<f64>,
    pub test_per_layer: Option<Vec<f64>>,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub data: String,
    pub data_fingerprint: String,
    pub episodes: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub ci: f64,
    pub per_layer: Vec<f64>,
    pub config_hash: String,
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_json<S: DeserializeOwned>(path: &Path) -> CliResult<S> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}
