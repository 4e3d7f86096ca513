//! Phase-based frequency-masking beamformer.
//!
//! For every time-frequency bin the observed phase difference between the
//! reference microphone and each other microphone is compared with the
//! difference a plane wave from the steering direction would produce. Bins
//! that agree on every pair keep the reference channel's coefficient; the
//! rest are attenuated to `mask_floor`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ArrayGeometry;
use crate::spectral::{normalize, StftEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AliasingPolicy {
    /// Compare wrapped phases at every frequency, accepting ambiguity above
    /// the spatial aliasing frequency.
    WrappedCompare,
    /// Pass every bin above the aliasing frequency untouched.
    LowpassOnly,
}

impl std::str::FromStr for AliasingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wrapped-compare" => Ok(Self::WrappedCompare),
            "lowpass-only" => Ok(Self::LowpassOnly),
            other => Err(Error::Config(format!(
                "aliasing policy must be wrapped-compare or lowpass-only, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerConfig {
    pub phase_tolerance_rad: f64,
    pub mask_floor: f64,
    pub reference_channel: usize,
    pub aliasing_policy: AliasingPolicy,
}

impl Default for BeamformerConfig {
    fn default() -> Self {
        Self {
            phase_tolerance_rad: 0.35 * PI,
            mask_floor: 0.05,
            reference_channel: 0,
            aliasing_policy: AliasingPolicy::WrappedCompare,
        }
    }
}

impl BeamformerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phase_tolerance_rad > 0.0 && self.phase_tolerance_rad < PI) {
            return Err(Error::Config(format!(
                "phase_tolerance_rad must lie in (0, pi), got {}",
                self.phase_tolerance_rad
            )));
        }
        if !(0.0..1.0).contains(&self.mask_floor) && self.mask_floor != 1.0 {
            return Err(Error::Config(format!(
                "mask_floor must lie in [0, 1), got {}",
                self.mask_floor
            )));
        }
        Ok(())
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Phase difference between microphones `pair.0` and `pair.1` predicted for
/// a plane wave from `doa_deg` at `freq_hz`.
pub fn expected_phase_diff(
    geometry: &ArrayGeometry,
    doa_deg: f64,
    freq_hz: f64,
    pair: (usize, usize),
) -> f64 {
    let d = geometry.steering_delays(doa_deg);
    wrap_phase(2.0 * PI * freq_hz * (d[pair.1] - d[pair.0]))
}

/// A beamformer bound to an array, a sample rate and a frame size.
#[derive(Debug, Clone)]
pub struct Beamformer {
    geometry: ArrayGeometry,
    config: BeamformerConfig,
    fs: u32,
    engine: StftEngine,
}

/// Per-bin, per-pair steering phases for one DOA.
#[derive(Debug, Clone)]
struct Steering {
    doa_deg: f64,
    /// bins x (mics - 1), pairs ordered by channel index skipping the reference.
    phases: Vec<f64>,
}

impl Beamformer {
    pub fn new(
        geometry: ArrayGeometry,
        config: BeamformerConfig,
        fs: u32,
        window_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        if config.reference_channel >= geometry.num_mics() {
            return Err(Error::Config(format!(
                "reference channel {} out of range for {} microphones",
                config.reference_channel,
                geometry.num_mics()
            )));
        }
        Ok(Self {
            geometry,
            config,
            fs,
            engine: StftEngine::new(window_len)?,
        })
    }

    pub fn config(&self) -> &BeamformerConfig {
        &self.config
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn engine(&self) -> &StftEngine {
        &self.engine
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.fs as f64 / self.engine.window_len() as f64
    }

    fn other_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.geometry.num_mics()).filter(move |&c| c != self.config.reference_channel)
    }

    fn steering(&self, doa_deg: f64) -> Steering {
        let delays = self.geometry.steering_delays(doa_deg);
        let r = self.config.reference_channel;
        let bins = self.engine.bins();
        let mut phases = Vec::with_capacity(bins * (delays.len() - 1));
        for k in 0..bins {
            let f = self.bin_frequency(k);
            for j in self.other_channels() {
                phases.push(2.0 * PI * f * (delays[j] - delays[r]));
            }
        }
        Steering { doa_deg, phases }
    }

    fn bin_passes(&self, k: usize, observed: &[f64], steering: &Steering) -> bool {
        if self.config.aliasing_policy == AliasingPolicy::LowpassOnly
            && self.bin_frequency(k) > self.geometry.aliasing_frequency()
        {
            return true;
        }
        let pairs = observed.len();
        let expected = &steering.phases[k * pairs..(k + 1) * pairs];
        observed
            .iter()
            .zip(expected)
            .all(|(o, e)| wrap_phase(o - e).abs() <= self.config.phase_tolerance_rad)
    }

    fn gain(&self, pass: bool) -> f64 {
        if pass {
            1.0
        } else {
            self.config.mask_floor
        }
    }

    /// Masks one STFT frame. `frames[c]` is the half spectrum of channel `c`.
    pub fn beamform_frame(&self, frames: &[&[Complex64]], doa_deg: f64) -> Result<Vec<Complex64>> {
        let m = self.geometry.num_mics();
        if frames.len() != m {
            return Err(Error::Dimension(format!(
                "expected {m} channel frames, got {}",
                frames.len()
            )));
        }
        let bins = self.engine.bins();
        if frames.iter().any(|f| f.len() != bins) {
            return Err(Error::Dimension(format!(
                "every frame must hold {bins} bins"
            )));
        }
        if !doa_deg.is_finite() {
            return Err(Error::Config("steering DOA must be finite".into()));
        }
        let steering = self.steering(doa_deg);
        let r = self.config.reference_channel;
        let mut observed = vec![0.0; m - 1];
        Ok((0..bins)
            .map(|k| {
                let x_ref = frames[r][k];
                for (o, j) in observed.iter_mut().zip(self.other_channels()) {
                    *o = (x_ref * frames[j][k].conj()).arg();
                }
                x_ref * self.gain(self.bin_passes(k, &observed, &steering))
            })
            .collect())
    }

    /// Fraction of bins in a frame that the mask passes.
    pub fn pass_fraction(&self, frames: &[&[Complex64]], doa_deg: f64) -> Result<f64> {
        let out = self.beamform_frame(frames, doa_deg)?;
        let r = self.config.reference_channel;
        let passed = out
            .iter()
            .zip(frames[r])
            .filter(|(o, x)| x.norm() == 0.0 || (*o - *x).norm() == 0.0)
            .count();
        Ok(passed as f64 / out.len() as f64)
    }

    /// Runs the beamformer over a whole multichannel signal, asking
    /// `doa_provider(frame_index, frame_start_s)` for the steering direction
    /// at every frame.
    pub fn beamform_stream(
        &self,
        channels: &[Vec<f64>],
        mut doa_provider: impl FnMut(usize, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let analyzed = AnalyzedMixture::new(self, channels)?;
        let mut stream = StreamingBeamformer::new(self, &analyzed);
        let hop = self.engine.hop();
        while let Some(t) = stream.next_frame() {
            let doa = doa_provider(t, (t * hop) as f64 / self.fs as f64);
            stream.process_frame(doa);
        }
        Ok(stream.into_output())
    }
}

/// DOA-independent analysis of a multichannel mixture: the reference
/// channel's spectra and the observed inter-microphone phase differences.
/// Shared by every run over the same mixture.
#[derive(Debug, Clone)]
pub struct AnalyzedMixture {
    frames: usize,
    bins: usize,
    pairs: usize,
    len: usize,
    reference: Vec<Complex64>,
    observed: Vec<f64>,
}

impl AnalyzedMixture {
    pub fn new(beamformer: &Beamformer, channels: &[Vec<f64>]) -> Result<Self> {
        let m = beamformer.geometry.num_mics();
        if channels.len() != m {
            return Err(Error::Dimension(format!(
                "expected {m} channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Dimension("channels differ in length".into()));
        }
        let engine = &beamformer.engine;
        if len < engine.window_len() {
            return Err(Error::SignalTooShort {
                needed: engine.window_len(),
                got: len,
            });
        }
        let frames = engine.frames_for(len);
        let bins = engine.bins();
        let pairs = m - 1;
        let (w, hop) = (engine.window_len(), engine.hop());
        let r = beamformer.config.reference_channel;
        let mut reference = Vec::with_capacity(frames * bins);
        let mut observed = Vec::with_capacity(frames * bins * pairs);
        let mut spectra = vec![Vec::new(); m];
        for t in 0..frames {
            for (c, spec) in spectra.iter_mut().enumerate() {
                engine.analyze(&channels[c][t * hop..t * hop + w], spec);
            }
            for (k, &x_ref) in spectra[r].iter().enumerate().take(bins) {
                reference.push(x_ref);
                for j in beamformer.other_channels() {
                    observed.push((x_ref * spectra[j][k].conj()).arg());
                }
            }
        }
        Ok(Self {
            frames,
            bins,
            pairs,
            len,
            reference,
            observed,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn input_len(&self) -> usize {
        self.len
    }
}

/// Frame-by-frame masking with overlap-add output. Output samples become
/// final once no later frame overlaps them, one window behind the input.
#[derive(Debug)]
pub struct StreamingBeamformer<'a> {
    beamformer: &'a Beamformer,
    mixture: &'a AnalyzedMixture,
    steering: Option<Steering>,
    next: usize,
    acc: Vec<f64>,
    norm: Vec<f64>,
    finalized: usize,
}

impl<'a> StreamingBeamformer<'a> {
    pub fn new(beamformer: &'a Beamformer, mixture: &'a AnalyzedMixture) -> Self {
        let norm = beamformer.engine.window_normalization(mixture.frames);
        Self {
            beamformer,
            mixture,
            steering: None,
            next: 0,
            acc: vec![0.0; norm.len()],
            norm,
            finalized: 0,
        }
    }

    /// Index of the next frame to process, if any remain.
    pub fn next_frame(&self) -> Option<usize> {
        (self.next < self.mixture.frames).then_some(self.next)
    }

    /// Number of input samples the next frame needs before it can run.
    pub fn next_frame_end(&self) -> usize {
        self.next * self.beamformer.engine.hop() + self.beamformer.engine.window_len()
    }

    /// Masks and overlap-adds the next frame steered at `doa_deg`.
    pub fn process_frame(&mut self, doa_deg: f64) {
        let t = self.next;
        assert!(t < self.mixture.frames, "no frames left");
        if self.steering.as_ref().map(|s| s.doa_deg) != Some(doa_deg) {
            self.steering = Some(self.beamformer.steering(doa_deg));
        }
        let steering = self.steering.as_ref().expect("steering set above");
        let (bins, pairs) = (self.mixture.bins, self.mixture.pairs);
        let reference = &self.mixture.reference[t * bins..(t + 1) * bins];
        let observed = &self.mixture.observed[t * bins * pairs..(t + 1) * bins * pairs];
        let masked: Vec<Complex64> = (0..bins)
            .map(|k| {
                let pass =
                    self.beamformer
                        .bin_passes(k, &observed[k * pairs..(k + 1) * pairs], steering);
                reference[k] * self.beamformer.gain(pass)
            })
            .collect();
        let frame = self.beamformer.engine.synthesize(&masked);
        let hop = self.beamformer.engine.hop();
        for (a, v) in self.acc[t * hop..].iter_mut().zip(&frame) {
            *a += v;
        }
        self.next += 1;
        self.finalized = if self.next == self.mixture.frames {
            self.acc.len()
        } else {
            self.next * hop
        };
    }

    /// Length of the output prefix that no further frame will change.
    pub fn finalized_len(&self) -> usize {
        self.finalized
    }

    /// Final output samples in `range`, which must lie within the finalized prefix.
    pub fn output(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        assert!(range.end <= self.finalized, "output not final yet");
        range
            .map(|n| normalize(self.acc[n], self.norm[n]))
            .collect()
    }

    pub fn into_output(self) -> Vec<f64> {
        let len = self.finalized;
        self.output(0..len)
    }
}
