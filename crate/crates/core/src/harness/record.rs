use serde::{Deserialize, Serialize};

use crate::beamform::wrap_phase;
use crate::error::{Error, Result};
use crate::quality::QualitySample;

/// A run is good when its final-third mean angle is closer than this to the truth.
pub const GOOD_RUN_TOLERANCE_DEG: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub theta_series: Vec<(f64, f64)>,
    pub quality_series: Vec<QualitySample>,
    pub good: bool,
    pub final_third_mean_theta: f64,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn new(
        run_id: String,
        seed: u64,
        config: serde_json::Value,
        theta_series: Vec<(f64, f64)>,
        quality_series: Vec<QualitySample>,
        true_doa_deg: f64,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let final_third_mean_theta = final_third_mean(&theta_series)?;
        let mut record = Self {
            run_id,
            seed,
            config,
            theta_series,
            quality_series,
            good: false,
            final_third_mean_theta,
            warnings,
        };
        record.good = classify_good_run(&record, true_doa_deg)?;
        Ok(record)
    }
}

fn angle_error(a: f64, b: f64) -> f64 {
    wrap_phase((a - b).to_radians()).to_degrees().abs()
}

/// Mean angle over the samples in the last third of the run's duration.
pub fn final_third_mean(theta_series: &[(f64, f64)]) -> Result<f64> {
    let end = theta_series
        .last()
        .ok_or_else(|| Error::Config("empty trajectory".into()))?
        .0;
    let start = end * 2.0 / 3.0;
    let tail: Vec<f64> = theta_series
        .iter()
        .filter(|(t, _)| *t >= start - 1e-9)
        .map(|(_, th)| *th)
        .collect();
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn classify_good_run(record: &RunRecord, true_doa_deg: f64) -> Result<bool> {
    let mean = final_third_mean(&record.theta_series)?;
    Ok(angle_error(mean, true_doa_deg) < GOOD_RUN_TOLERANCE_DEG)
}

/// Time of the first tick whose trailing `window_s` mean angle lies within
/// the good-run tolerance of the truth. Ticks before a full window exist
/// are not considered.
pub fn convergence_time(
    theta_series: &[(f64, f64)],
    true_doa_deg: f64,
    window_s: f64,
) -> Option<f64> {
    let mut lo = 0;
    let mut sum = 0.0;
    let first = theta_series.first()?.0;
    for (hi, &(t, th)) in theta_series.iter().enumerate() {
        sum += th;
        while theta_series[lo].0 <= t - window_s + 1e-9 {
            sum -= theta_series[lo].1;
            lo += 1;
        }
        if t - first + 1e-9 < window_s {
            continue;
        }
        let mean = sum / (hi - lo + 1) as f64;
        if angle_error(mean, true_doa_deg) < GOOD_RUN_TOLERANCE_DEG {
            return Some(t);
        }
    }
    None
}

/// Per-tick statistics over runs sharing a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub time: Vec<f64>,
    pub mean_theta: Vec<f64>,
    /// Population standard deviation.
    pub std_theta: Vec<f64>,
    pub n_runs: usize,
    pub good_run_count: usize,
}

impl TrajectoryStats {
    /// Mean over ticks of the per-tick standard deviation.
    pub fn mean_std(&self) -> f64 {
        self.std_theta.iter().sum::<f64>() / self.std_theta.len().max(1) as f64
    }
}

pub fn aggregate(records: &[RunRecord]) -> Result<TrajectoryStats> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("cannot aggregate zero runs".into()))?;
    let time: Vec<f64> = first.theta_series.iter().map(|p| p.0).collect();
    for r in records {
        let same = r.theta_series.len() == time.len()
            && r.theta_series
                .iter()
                .zip(&time)
                .all(|(p, t)| (p.0 - t).abs() < 1e-9);
        if !same {
            return Err(Error::Dimension(format!(
                "run {} is not on the same time grid as run {}",
                r.run_id, first.run_id
            )));
        }
    }
    let n = records.len() as f64;
    let mut mean_theta = Vec::with_capacity(time.len());
    let mut std_theta = Vec::with_capacity(time.len());
    for i in 0..time.len() {
        let mean = records.iter().map(|r| r.theta_series[i].1).sum::<f64>() / n;
        let var = records
            .iter()
            .map(|r| (r.theta_series[i].1 - mean).powi(2))
            .sum::<f64>()
            / n;
        mean_theta.push(mean);
        std_theta.push(var.sqrt());
    }
    Ok(TrajectoryStats {
        time,
        mean_theta,
        std_theta,
        n_runs: records.len(),
        good_run_count: records.iter().filter(|r| r.good).count(),
    })
}
