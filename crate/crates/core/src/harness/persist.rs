//! CSV, JSON and manifest files for runs and experiment cells.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{RunRecord, TrajectoryStats};
use crate::error::{Error, Result};

const RUN_HEADER: [&str; 5] = [
    "time_s",
    "theta_deg",
    "raw_q_db",
    "smooth_q_db",
    "vad_active",
];
const AGGREGATE_HEADER: [&str; 3] = ["time_s", "mean_theta", "std_theta"];

fn data_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| data_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| data_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| data_err(path, e))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    let found = r.headers().map_err(|e| data_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(data_err(
            path,
            format!(
                "expected columns {}, found {}",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| data_err(path, e))?;
    if rows.is_empty() {
        return Err(data_err(path, "no data rows"));
    }
    Ok(rows)
}

fn field(path: &Path, row: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>> {
    let s = row.get(i).unwrap_or("").trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| {
        data_err(
            path,
            format!("row {line}: column {} is not a number: {s:?}", i + 1),
        )
    })
}

fn required(path: &Path, row: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    field(path, row, i, line)?
        .ok_or_else(|| data_err(path, format!("row {line}: column {} is empty", i + 1)))
}

/// One run's trajectory as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub time: Vec<f64>,
    pub theta: Vec<f64>,
    pub raw_q_db: Vec<Option<f64>>,
    pub smooth_q_db: Vec<Option<f64>>,
    pub vad_active: Vec<bool>,
}

pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    if record.theta_series.len() != record.quality_series.len() {
        return Err(Error::Dimension(format!(
            "run {} has {} angles but {} quality samples",
            record.run_id,
            record.theta_series.len(),
            record.quality_series.len()
        )));
    }
    let rows = record
        .theta_series
        .iter()
        .zip(&record.quality_series)
        .map(|(&(t, theta), q)| {
            vec![
                num(t),
                num(theta),
                opt(q.raw_q_db),
                opt(q.smooth_q_db),
                u8::from(q.vad_active).to_string(),
            ]
        });
    write_rows(path, &RUN_HEADER, rows)
}

pub fn read_run_csv(path: &Path) -> Result<RunSeries> {
    let rows = read_rows(path, &RUN_HEADER)?;
    let mut s = RunSeries {
        time: Vec::with_capacity(rows.len()),
        theta: Vec::with_capacity(rows.len()),
        raw_q_db: Vec::with_capacity(rows.len()),
        smooth_q_db: Vec::with_capacity(rows.len()),
        vad_active: Vec::with_capacity(rows.len()),
    };
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        s.time.push(required(path, row, 0, line)?);
        s.theta.push(required(path, row, 1, line)?);
        s.raw_q_db.push(field(path, row, 2, line)?);
        s.smooth_q_db.push(field(path, row, 3, line)?);
        s.vad_active.push(match row.get(4) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(data_err(
                    path,
                    format!("row {line}: bad vad flag {other:?}"),
                ))
            }
        });
    }
    Ok(s)
}

/// Config snapshot, outcome and warnings of one run.
pub fn write_run_sidecar(path: &Path, record: &RunRecord) -> Result<()> {
    let doc = serde_json::json!({
        "run_id": record.run_id,
        "seed": record.seed,
        "good": record.good,
        "final_third_mean_theta": record.final_third_mean_theta,
        "config": record.config,
        "warnings": record.warnings,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| data_err(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn write_aggregate_csv(path: &Path, stats: &TrajectoryStats) -> Result<()> {
    let rows = (0..stats.time.len()).map(|i| {
        vec![
            num(stats.time[i]),
            num(stats.mean_theta[i]),
            num(stats.std_theta[i]),
        ]
    });
    write_rows(path, &AGGREGATE_HEADER, rows)
}

/// Returns `(time, mean, std)` columns.
pub fn read_aggregate_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let rows = read_rows(path, &AGGREGATE_HEADER)?;
    let (mut t, mut m, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in rows.iter().enumerate() {
        t.push(required(path, row, 0, i + 2)?);
        m.push(required(path, row, 1, i + 2)?);
        s.push(required(path, row, 2, i + 2)?);
    }
    Ok((t, m, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub label: String,
    pub complete: bool,
    pub runs_planned: usize,
    pub runs_done: usize,
    pub good_run_count: Option<usize>,
    pub theta_est_deg: Option<f64>,
    pub true_doa_deg: Option<f64>,
    /// Paths relative to the manifest's directory.
    pub files: Vec<String>,
}

impl ManifestCell {
    pub fn pending(label: &str, runs_planned: usize) -> Self {
        Self {
            label: label.to_string(),
            complete: false,
            runs_planned,
            runs_done: 0,
            good_run_count: None,
            theta_est_deg: None,
            true_doa_deg: None,
            files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub master_seed: u64,
    pub scene_seed: u64,
    pub duration_s: f64,
    pub cells: Vec<ManifestCell>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE_NAME);
        let text = serde_json::to_string_pretty(self).map_err(|e| data_err(&path, e))?;
        write_text(&path, &(text + "\n"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE_NAME);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| data_err(&path, e))
    }
}
