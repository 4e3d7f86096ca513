//! Closed-loop trials on a simulated clock, plus experiment grids.
//!
//! One tick every `t_h` seconds: the beamformer consumes the new input
//! steered at the most recently published angle, the quality stream scores
//! the trailing `t_w` seconds of finalized output, and (after warm-up) the
//! corrector publishes a new angle for the next tick.

mod experiment;
mod persist;
mod plot;
mod record;
mod scenes;

pub use experiment::{
    experiment_grid, run_cell, CellResult, CellSpec, ExperimentPreset, GridOptions, SceneKind,
    PRESETS,
};
pub use persist::{
    read_aggregate_csv, read_run_csv, write_aggregate_csv, write_run_csv, write_run_sidecar,
    Manifest, ManifestCell, RunSeries,
};
pub use plot::{plot_path, render_band_svg, render_trajectory_svg};
pub use record::{
    aggregate, classify_good_run, convergence_time, final_third_mean, RunRecord, TrajectoryStats,
    GOOD_RUN_TOLERANCE_DEG,
};
pub use scenes::{default_scene_plan, three_source_plan, SceneBuilder, SourceSignal};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamform::{AnalyzedMixture, Beamformer, BeamformerConfig, StreamingBeamformer};
use crate::corrector::{CorrectionLoop, CorrectorConfig};
use crate::error::{Error, Result};
use crate::quality::{QualityConfig, QualityStream};
use crate::scene::{render_mixture, ScenePlan};
use crate::spectral::DEFAULT_WINDOW_LEN;

/// Every tunable of one closed-loop trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub beamformer: BeamformerConfig,
    pub quality: QualityConfig,
    pub corrector: CorrectorConfig,
    pub window_len: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            beamformer: BeamformerConfig::default(),
            quality: QualityConfig::default(),
            corrector: CorrectorConfig::default(),
            window_len: DEFAULT_WINDOW_LEN,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.beamformer.validate()?;
        self.quality.validate()?;
        self.corrector.validate()
    }
}

/// A rendered and analyzed scene, reusable by every trial that shares it.
#[derive(Debug)]
pub struct PreparedScene {
    digest: String,
    fs: u32,
    duration_s: f64,
    true_doa_deg: f64,
    beamformer: Beamformer,
    mixture: AnalyzedMixture,
    /// The source of interest as received at the beamformer's reference
    /// microphone, time-aligned with the beamformer output.
    reference: Vec<f64>,
}

impl PreparedScene {
    pub fn new(plan: &ScenePlan, beamformer: &BeamformerConfig, window_len: usize) -> Result<Self> {
        let rendered = render_mixture(plan)?;
        let bf = Beamformer::new(
            plan.geometry.clone(),
            beamformer.clone(),
            plan.fs,
            window_len,
        )?;
        let mixture = AnalyzedMixture::new(&bf, &rendered.channels)?;
        let reference = rendered.soi_images[beamformer.reference_channel].clone();
        Ok(Self {
            digest: plan.digest(),
            fs: plan.fs,
            duration_s: plan.duration_s,
            true_doa_deg: plan.soi().true_doa_deg,
            beamformer: bf,
            mixture,
            reference,
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    pub fn true_doa_deg(&self) -> f64 {
        self.true_doa_deg
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn beamformer(&self) -> &Beamformer {
        &self.beamformer
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Beamforms the whole scene at a fixed angle (no feedback).
    pub fn beamform_fixed(&self, doa_deg: f64) -> Vec<f64> {
        let mut stream = StreamingBeamformer::new(&self.beamformer, &self.mixture);
        while stream.next_frame().is_some() {
            stream.process_frame(doa_deg);
        }
        stream.into_output()
    }

    fn check_compatible(&self, config: &TrialConfig) -> Result<()> {
        if config.beamformer != *self.beamformer.config()
            || config.window_len != self.beamformer.engine().window_len()
        {
            return Err(Error::Config(
                "trial beamformer settings differ from the prepared scene".into(),
            ));
        }
        let window = config.quality.window_samples(self.fs);
        if window > self.mixture.input_len() {
            return Err(Error::Config(format!(
                "capture window t_w = {} s is longer than the {} s scene",
                config.quality.t_w, self.duration_s
            )));
        }
        Ok(())
    }
}

/// Seed of the dropout stream, kept apart from the estimator noise stream.
fn dropout_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
}

/// Runs one closed-loop trial starting from `theta_est`.
pub fn run_trial(
    scene: &PreparedScene,
    config: &TrialConfig,
    theta_est: f64,
    seed: u64,
) -> Result<RunRecord> {
    config.validate()?;
    scene.check_compatible(config)?;

    let fs = scene.fs as f64;
    let q = &config.quality;
    let tick_samples = q.t_h * fs;
    let window = q.window_samples(scene.fs);
    let ticks = (scene.duration_s / q.t_h + 1e-9).floor() as u64;

    let mut quality = QualityStream::new(q.clone(), scene.fs, seed)?;
    let mut corrector = CorrectionLoop::new(theta_est, config.corrector.clone(), q.t_h)?;
    let mut dropout = ChaCha8Rng::seed_from_u64(dropout_seed(seed));
    let mut stream = StreamingBeamformer::new(&scene.beamformer, &scene.mixture);

    let mut enhanced: Vec<f64> = Vec::with_capacity(scene.reference.len());
    let mut theta_series = Vec::with_capacity(ticks as usize);
    let mut quality_series = Vec::with_capacity(ticks as usize);

    for k in 1..=ticks {
        let input_end = (k as f64 * tick_samples).round() as usize;
        let theta = corrector.theta();
        while stream.next_frame().is_some() && stream.next_frame_end() <= input_end {
            stream.process_frame(theta);
        }
        let done = enhanced.len();
        let finalized = stream.finalized_len();
        let mut fresh = stream.output(done..finalized);
        if q.dropout_prob > 0.0 && dropout.random::<f64>() < q.dropout_prob {
            fresh.iter_mut().for_each(|v| *v = 0.0);
        }
        enhanced.extend_from_slice(&fresh);

        let time_s = corrector.time_of(k);
        let n = enhanced.len();
        let sample = if n >= window {
            quality.step(
                time_s,
                &enhanced[n - window..n],
                &scene.reference[n - window..n],
            )?
        } else {
            quality.gated_step(time_s)
        };
        theta_series.push(corrector.tick(sample.smooth_q_db));
        quality_series.push(sample);
    }

    let warnings = corrector
        .rejected()
        .iter()
        .map(|(t, why)| format!("t={t:.3}s: corrector step skipped: {why}"))
        .collect();
    RunRecord::new(
        format!("run-{seed}"),
        seed,
        serde_json::json!({
            "trial": config,
            "scene_digest": scene.digest,
            "theta_est_deg": theta_est,
            "true_doa_deg": scene.true_doa_deg,
            "duration_s": scene.duration_s,
            "fs": scene.fs,
        }),
        theta_series,
        quality_series,
        scene.true_doa_deg,
        warnings,
    )
}
