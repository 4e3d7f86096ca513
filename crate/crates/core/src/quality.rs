//! Online speech-quality stream: every `t_h` seconds the latest `t_w`
//! window of enhanced audio is checked by an energy VAD, scored when enough
//! of it is active, and exponentially smoothed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp range of the SI-SDR oracle, in dB.
pub const SI_SDR_MIN_DB: f64 = -40.0;
pub const SI_SDR_MAX_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// SI-SDR against the known clean reference.
    Oracle,
    /// Oracle plus Gaussian noise of `noise_sigma_db`.
    NoisyOracle,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "noisy-oracle" => Ok(Self::NoisyOracle),
            other => Err(Error::Config(format!(
                "estimator must be oracle or noisy-oracle, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::NoisyOracle => "noisy-oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    /// Step length, seconds.
    pub t_h: f64,
    /// Capture window, seconds.
    pub t_w: f64,
    /// VAD sub-window, seconds.
    pub t_vad: f64,
    /// Weight of the previous smoothed value.
    pub alpha: f64,
    pub vad_energy_threshold_db: f64,
    pub estimator: EstimatorKind,
    pub noise_sigma_db: f64,
    /// Probability per step that the newest enhanced audio is zeroed.
    pub dropout_prob: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            t_h: 0.1,
            t_w: 3.0,
            t_vad: 0.032,
            alpha: 0.9,
            vad_energy_threshold_db: -45.0,
            estimator: EstimatorKind::NoisyOracle,
            noise_sigma_db: 2.5,
            dropout_prob: 0.0,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("t_h", self.t_h)?;
        positive("t_w", self.t_w)?;
        positive("t_vad", self.t_vad)?;
        if self.t_vad >= self.t_w {
            return Err(Error::Config(format!(
                "t_vad ({}) must be shorter than t_w ({})",
                self.t_vad, self.t_w
            )));
        }
        if self.t_h > self.t_w {
            return Err(Error::Config(format!(
                "t_h ({}) must not exceed t_w ({})",
                self.t_h, self.t_w
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.noise_sigma_db.is_finite() && self.noise_sigma_db >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma_db must be non-negative, got {}",
                self.noise_sigma_db
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!(
                "dropout_prob must lie in [0, 1], got {}",
                self.dropout_prob
            )));
        }
        if !self.vad_energy_threshold_db.is_finite() {
            return Err(Error::Config("VAD threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self, fs: u32) -> usize {
        (self.t_w * fs as f64).round() as usize
    }
}

/// One output of the quality stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySample {
    pub time_s: f64,
    /// Unsmoothed estimate; `None` when the VAD gate was closed.
    pub raw_q_db: Option<f64>,
    /// Latest smoothed value, held across gated steps; `None` before the
    /// first ungated step.
    pub smooth_q_db: Option<f64>,
    pub vad_active: bool,
    pub n_act: usize,
    pub n_total: usize,
}

/// Counts active `t_vad` sub-windows in `window`. A sub-window is active
/// when its RMS level in dBFS exceeds `threshold_db`.
pub fn vad_activity(window: &[f64], t_vad: f64, fs: u32, threshold_db: f64) -> (usize, usize) {
    let sub = ((t_vad * fs as f64).round() as usize).max(1);
    let n_total = window.len() / sub;
    let n_act = window
        .chunks_exact(sub)
        .filter(|c| {
            let ms = c.iter().map(|x| x * x).sum::<f64>() / sub as f64;
            ms > 0.0 && 10.0 * ms.log10() > threshold_db
        })
        .count();
    (n_act, n_total)
}

/// Whether strictly more than three quarters of the sub-windows are active.
pub fn gate(n_act: usize, n_total: usize) -> bool {
    4 * n_act > 3 * n_total
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to [-40, 60].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::Dimension(format!(
            "SI-SDR needs equal non-empty lengths, got {} and {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
    if ref_energy == 0.0 {
        return Err(Error::SilentReference);
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, s)| e * s).sum();
    let scale = dot / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, s) in estimate.iter().zip(reference) {
        let t = scale * s;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    let db = if residual == 0.0 {
        SI_SDR_MAX_DB
    } else if target == 0.0 {
        SI_SDR_MIN_DB
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(SI_SDR_MIN_DB, SI_SDR_MAX_DB))
}

/// Seeded additive Gaussian perturbation of quality estimates.
#[derive(Debug, Clone)]
pub struct NoiseEmulator {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseEmulator {
    pub fn new(sigma_db: f64, seed: u64) -> Result<Self> {
        if !(sigma_db.is_finite() && sigma_db >= 0.0) {
            return Err(Error::Config(format!(
                "noise sigma must be non-negative, got {sigma_db}"
            )));
        }
        let normal = (sigma_db > 0.0).then(|| Normal::new(0.0, sigma_db).expect("validated sigma"));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
        })
    }

    pub fn emulate(&mut self, q_db: f64) -> f64 {
        match &self.normal {
            Some(n) => q_db + n.sample(&mut self.rng),
            None => q_db,
        }
    }
}

/// Exponential smoothing; `alpha` weights the previous value.
pub fn smooth(prev_q: f64, raw_q: f64, alpha: f64) -> f64 {
    alpha * prev_q + (1.0 - alpha) * raw_q
}

/// Per-run state of the quality stream.
#[derive(Debug, Clone)]
pub struct QualityStream {
    config: QualityConfig,
    fs: u32,
    noise: Option<NoiseEmulator>,
    smoothed: Option<f64>,
}

impl QualityStream {
    pub fn new(config: QualityConfig, fs: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        let noise = match config.estimator {
            EstimatorKind::Oracle => None,
            EstimatorKind::NoisyOracle => Some(NoiseEmulator::new(config.noise_sigma_db, seed)?),
        };
        Ok(Self {
            config,
            fs,
            noise,
            smoothed: None,
        })
    }

    pub fn config(&self) -> &QualityConfig {
        &self.config
    }

    pub fn smoothed(&self) -> Option<f64> {
        self.smoothed
    }

    /// One step over the latest enhanced window and the time-aligned clean
    /// reference. The first ungated estimate seeds the smoother.
    pub fn step(
        &mut self,
        time_s: f64,
        window: &[f64],
        reference: &[f64],
    ) -> Result<QualitySample> {
        let (n_act, n_total) = vad_activity(
            window,
            self.config.t_vad,
            self.fs,
            self.config.vad_energy_threshold_db,
        );
        let open = gate(n_act, n_total);
        let raw = if open {
            let q = si_sdr(window, reference).map_err(|e| Error::Quality {
                time_s,
                source: Box::new(e),
            })?;
            let q = match &mut self.noise {
                Some(n) => n.emulate(q),
                None => q,
            };
            self.smoothed = Some(match self.smoothed {
                Some(prev) => smooth(prev, q, self.config.alpha),
                None => q,
            });
            Some(q)
        } else {
            None
        };
        Ok(QualitySample {
            time_s,
            raw_q_db: raw,
            smooth_q_db: self.smoothed,
            vad_active: open,
            n_act,
            n_total,
        })
    }

    /// A step where no full window is available yet; always gated.
    pub fn gated_step(&self, time_s: f64) -> QualitySample {
        QualitySample {
            time_s,
            raw_q_db: None,
            smooth_q_db: self.smoothed,
            vad_active: false,
            n_act: 0,
            n_total: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vad_examples() {
        let fs = 16_000;
        let n = 48_000;
        assert_eq!(vad_activity(&vec![0.0; n], 0.032, fs, -45.0), (0, 93));
        let sine: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin()).collect();
        assert_eq!(vad_activity(&sine, 0.032, fs, -45.0), (93, 93));
    }

    #[test]
    fn gate_examples() {
        assert!(gate(93, 93));
        assert!(gate(70, 93));
        assert!(!gate(69, 93));
        assert!(!gate(0, 93));
        assert!(!gate(0, 0));
    }

    #[test]
    fn si_sdr_examples() {
        let s: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        assert_eq!(si_sdr(&s, &s).unwrap(), 60.0);
        let doubled: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
        assert_eq!(si_sdr(&doubled, &s).unwrap(), 60.0);
        assert!(matches!(
            si_sdr(&s, &[0.0; 64]),
            Err(Error::SilentReference)
        ));
        assert!(si_sdr(&s, &s[..10]).is_err());
    }

    #[test]
    fn si_sdr_orthogonal_equal_energy_is_zero_db() {
        let s = [1.0, 1.0, 1.0, 1.0];
        let n = [1.0, -1.0, 1.0, -1.0];
        let e: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!(si_sdr(&e, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn noise_emulator_behaviour() {
        let mut quiet = NoiseEmulator::new(0.0, 1).unwrap();
        assert_eq!(quiet.emulate(12.5), 12.5);
        let mut a = NoiseEmulator::new(2.5, 9).unwrap();
        let mut b = NoiseEmulator::new(2.5, 9).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| a.emulate(0.0)).collect();
        let ys: Vec<f64> = (0..10_000).map(|_| b.emulate(0.0)).collect();
        assert_eq!(xs, ys);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((2.3..=2.7).contains(&var.sqrt()), "std {}", var.sqrt());
        assert!(NoiseEmulator::new(-1.0, 0).is_err());
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth(10.0, 20.0, 0.0), 20.0);
        assert_eq!(smooth(10.0, 20.0, 1.0), 10.0);
        assert_eq!(smooth(10.0, 20.0, 0.9), 11.0);
    }

    #[test]
    fn config_validation() {
        assert!(QualityConfig::default().validate().is_ok());
        let bad = [
            QualityConfig {
                t_vad: 3.0,
                ..Default::default()
            },
            QualityConfig {
                t_h: 4.0,
                ..Default::default()
            },
            QualityConfig {
                alpha: 1.1,
                ..Default::default()
            },
            QualityConfig {
                noise_sigma_db: -1.0,
                ..Default::default()
            },
            QualityConfig {
                dropout_prob: 2.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn active_window(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.3 * (i as f64 * 0.07).sin()).collect()
    }

    #[test]
    fn silent_window_holds_smoothed_value() {
        let cfg = QualityConfig {
            estimator: EstimatorKind::Oracle,
            ..Default::default()
        };
        let mut q = QualityStream::new(cfg, 16_000, 0).unwrap();
        let w = active_window(48_000);
        let noisy: Vec<f64> = w
            .iter()
            .enumerate()
            .map(|(i, x)| x + if i % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        let first = q.step(0.1, &noisy, &w).unwrap();
        assert!(first.vad_active);
        let held = first.smooth_q_db;
        let silent = q.step(0.2, &vec![0.0; 48_000], &w).unwrap();
        assert!(!silent.vad_active);
        assert_eq!(silent.raw_q_db, None);
        assert_eq!(silent.smooth_q_db, held);
    }

    #[test]
    fn perfect_enhancement_converges_to_clamp() {
        let cfg = QualityConfig {
            estimator: EstimatorKind::Oracle,
            ..Default::default()
        };
        let mut q = QualityStream::new(cfg, 16_000, 0).unwrap();
        let w = active_window(48_000);
        // Start from a degraded estimate, then feed perfect windows.
        let degraded: Vec<f64> = w.iter().map(|x| x + 0.2).collect();
        let mut prev = q.step(0.0, &degraded, &w).unwrap().smooth_q_db.unwrap();
        for k in 1..200 {
            let s = q.step(k as f64 * 0.1, &w, &w).unwrap().smooth_q_db.unwrap();
            assert!(s >= prev && s <= 60.0);
            prev = s;
        }
        assert!((60.0 - prev).abs() < 1e-6);
    }
}
