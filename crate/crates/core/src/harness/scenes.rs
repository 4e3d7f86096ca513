use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::scene::{synth_speech_like, ArrayGeometry, ScenePlan, SourceSpec, DEFAULT_FS};
use crate::wav::load_wav;

/// Where a source's waveform comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSignal {
    Synth { seed: u64 },
    Wav(PathBuf),
}

impl std::str::FromStr for SourceSignal {
    type Err = Error;

    /// `synth:<seed>` or `wav:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("synth:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("bad synth seed in {s:?}")))?;
            Ok(Self::Synth { seed })
        } else if let Some(path) = s.strip_prefix("wav:") {
            Ok(Self::Wav(PathBuf::from(path)))
        } else {
            Err(Error::Config(format!(
                "source signal must be synth:<seed> or wav:<path>, got {s:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PlannedSource {
    signal: SourceSignal,
    doa_deg: f64,
    /// `None` means scale to the power of the source of interest.
    gain: Option<f64>,
}

/// Assembles a [`ScenePlan`] from signal descriptions. The first source
/// added is the source of interest unless [`SceneBuilder::soi`] says otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBuilder {
    sources: Vec<PlannedSource>,
    soi_index: usize,
    pub fs: u32,
    pub duration_s: f64,
    pub diffuse_noise_db: Option<f64>,
    pub seed: u64,
}

impl SceneBuilder {
    pub fn new(duration_s: f64, seed: u64) -> Self {
        Self {
            sources: Vec::new(),
            soi_index: 0,
            fs: DEFAULT_FS,
            duration_s,
            diffuse_noise_db: None,
            seed,
        }
    }

    pub fn source(mut self, signal: SourceSignal, doa_deg: f64, gain: Option<f64>) -> Self {
        self.sources.push(PlannedSource {
            signal,
            doa_deg,
            gain,
        });
        self
    }

    pub fn soi(mut self, index: usize) -> Self {
        self.soi_index = index;
        self
    }

    pub fn build(&self) -> Result<ScenePlan> {
        if self.soi_index >= self.sources.len() {
            return Err(Error::Scene(format!(
                "source of interest {} does not exist ({} sources)",
                self.soi_index,
                self.sources.len()
            )));
        }
        let mut loaded = Vec::with_capacity(self.sources.len());
        for s in &self.sources {
            let (signal, fs) = match &s.signal {
                SourceSignal::Synth { seed } => {
                    (synth_speech_like(self.duration_s, self.fs, *seed)?, self.fs)
                }
                SourceSignal::Wav(path) => load_wav(path)?,
            };
            loaded.push((signal, fs));
        }
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
        let soi = &self.sources[self.soi_index];
        let soi_gain = soi.gain.unwrap_or(1.0);
        let soi_rms = rms(&loaded[self.soi_index].0) * soi_gain;

        let mut order: Vec<usize> = vec![self.soi_index];
        order.extend((0..self.sources.len()).filter(|&i| i != self.soi_index));
        let sources = order
            .into_iter()
            .map(|i| {
                let (signal, fs) = loaded[i].clone();
                let planned = &self.sources[i];
                let gain = match planned.gain {
                    Some(g) => g,
                    None if i == self.soi_index => 1.0,
                    None => {
                        let r = rms(&signal);
                        if r > 0.0 {
                            soi_rms / r
                        } else {
                            1.0
                        }
                    }
                };
                SourceSpec::new(signal, fs, planned.doa_deg, gain)
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = ScenePlan {
            geometry: ArrayGeometry::default_triangular(),
            sources,
            fs: self.fs,
            diffuse_noise_db: self.diffuse_noise_db,
            duration_s: self.duration_s,
            seed: self.seed,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Two equal-power speech-like sources at 0° and 90°. `soi_doa_deg` picks
/// which one is the source of interest.
pub fn default_scene_plan(duration_s: f64, seed: u64, soi_doa_deg: f64) -> Result<ScenePlan> {
    let doas = [0.0, 90.0];
    multi_source(&doas, duration_s, seed, soi_doa_deg)
}

/// Three equal-power sources at 0°, 90° and 180°.
pub fn three_source_plan(duration_s: f64, seed: u64, soi_doa_deg: f64) -> Result<ScenePlan> {
    multi_source(&[0.0, 90.0, 180.0], duration_s, seed, soi_doa_deg)
}

fn multi_source(doas: &[f64], duration_s: f64, seed: u64, soi_doa_deg: f64) -> Result<ScenePlan> {
    let soi = doas
        .iter()
        .position(|&d| d == soi_doa_deg)
        .ok_or_else(|| Error::Scene(format!("no source at {soi_doa_deg}° in {doas:?}")))?;
    let mut builder = SceneBuilder::new(duration_s, seed);
    for (i, &doa) in doas.iter().enumerate() {
        let signal = SourceSignal::Synth {
            seed: seed.wrapping_mul(1000).wrapping_add(i as u64 + 1),
        };
        builder = builder.source(signal, doa, None);
    }
    builder.soi(soi).build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_layout() {
        let p = default_scene_plan(5.0, 0, 0.0).unwrap();
        assert_eq!(p.sources.len(), 2);
        assert_eq!(p.soi().true_doa_deg, 0.0);
        assert_eq!(p.sources[1].true_doa_deg, 90.0);
        let power = |s: &SourceSpec| {
            s.signal.iter().map(|v| (v * s.gain).powi(2)).sum::<f64>() / s.signal.len() as f64
        };
        assert!((power(&p.sources[0]) / power(&p.sources[1]) - 1.0).abs() < 1e-9);

        let swapped = default_scene_plan(5.0, 0, 90.0).unwrap();
        assert_eq!(swapped.soi().true_doa_deg, 90.0);
        assert_eq!(swapped.soi().signal, p.sources[1].signal);
        assert!(default_scene_plan(5.0, 0, 45.0).is_err());
    }

    #[test]
    fn source_signal_parsing() {
        assert_eq!(
            "synth:7".parse::<SourceSignal>().unwrap(),
            SourceSignal::Synth { seed: 7 }
        );
        assert_eq!(
            "wav:a/b.wav".parse::<SourceSignal>().unwrap(),
            SourceSignal::Wav("a/b.wav".into())
        );
        assert!("mp3:x".parse::<SourceSignal>().is_err());
        assert!("synth:x".parse::<SourceSignal>().is_err());
    }
}
