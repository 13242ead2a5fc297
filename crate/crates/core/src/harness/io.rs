//! On-disk layout of one experiment directory:
//!
//! * `results.csv` with columns `replication,seed,final_regret`
//! * `manifest.json` holding the config, its hash, the code version and wall time
//! * `curve.csv` with columns `t,mean_cum_regret,p5,p95`, when a curve was kept

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{CurvePoint, ExperimentConfig, RunRecord, Summary};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub replication: usize,
    pub seed: u64,
    pub final_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub wall_time_secs: f64,
    pub config: ExperimentConfig,
    pub stats: Summary,
}

fn io_err(context: &Path, source: std::io::Error) -> Error {
    Error::Io {
        context: context.display().to_string(),
        source,
    }
}

fn csv_err(context: &Path, source: csv::Error) -> Error {
    Error::Csv {
        context: context.display().to_string(),
        source,
    }
}

fn json_err(context: &Path, source: serde_json::Error) -> Error {
    Error::Json {
        context: context.display().to_string(),
        source,
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Malformed(format!(
            "{}: header is `{}`, expected `{}`",
            path.display(),
            found.iter().collect::<Vec<_>>().join(","),
            header.join(",")
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Deserialize { pos: Some(pos), err } => Error::Malformed(format!(
                "{}: line {}: column `{}`: {}",
                path.display(),
                pos.line(),
                err.field().and_then(|i| header.get(i as usize)).unwrap_or(&"?"),
                err.kind()
            )),
            _ => csv_err(path, e),
        })
}

pub fn write_results(record: &RunRecord, path: &Path) -> Result<()> {
    let rows = record
        .seeds
        .iter()
        .zip(&record.final_regrets)
        .enumerate()
        .map(|(replication, (&seed, &final_regret))| ResultRow {
            replication,
            seed,
            final_regret,
        });
    write_rows(path, rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let rows: Vec<ResultRow> = read_rows(path, &["replication", "seed", "final_regret"])?;
    for (i, row) in rows.iter().enumerate() {
        if row.replication != i {
            return Err(Error::Malformed(format!(
                "{}: line {}: replication {} out of order",
                path.display(),
                i + 2,
                row.replication
            )));
        }
    }
    Ok(rows)
}

pub fn write_curve(curve: &[CurvePoint], path: &Path) -> Result<()> {
    write_rows(path, curve)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    read_rows(path, &["t", "mean_cum_regret", "p5", "p95"])
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

/// Writes the three result files into `dir`, creating it if needed.
pub fn export(
    record: &RunRecord,
    config: &ExperimentConfig,
    wall_time_secs: f64,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_results(record, &dir.join(RESULTS_FILE))?;
    if let Some(curve) = &record.curve {
        write_curve(curve, &dir.join(CURVE_FILE))?;
    }
    let manifest = Manifest {
        config_hash: record.config_hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs,
        config: config.clone(),
        stats: record.stats,
    };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))
}

/// Rebuilds a record from an experiment directory, recomputing statistics
/// from the stored final regrets.
pub fn load_record(dir: &Path) -> Result<(Manifest, RunRecord)> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let rows = read_results(&dir.join(RESULTS_FILE))?;
    let curve_path = dir.join(CURVE_FILE);
    let curve = if curve_path.exists() {
        Some(read_curve(&curve_path)?)
    } else {
        None
    };
    let record = RunRecord::new(
        manifest.config_hash.clone(),
        rows.iter().map(|r| r.seed).collect(),
        rows.iter().map(|r| r.final_regret).collect(),
        curve,
    )?;
    Ok((manifest, record))
}
