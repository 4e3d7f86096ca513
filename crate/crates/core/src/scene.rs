//! Array geometry and far-field scene rendering.
//!
//! Angles are in degrees, counterclockwise from the +x axis, in the plane of
//! the array. Sources are plane waves: every microphone sees the same
//! waveform, shifted by its projection onto the propagation direction.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_FS: u32 = 16_000;
/// Side length of the default triangular array, in meters.
pub const DEFAULT_MIC_SPACING: f64 = 0.18;
/// Taps of the windowed-sinc fractional delay kernel.
pub const FRACTIONAL_DELAY_TAPS: usize = 64;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    mic_positions: Vec<Point>,
    speed_of_sound: f64,
    reference_point: Point,
}

impl ArrayGeometry {
    /// Builds a geometry; the reference point is the centroid of the microphones.
    pub fn new(mic_positions: Vec<Point>, speed_of_sound: f64) -> Result<Self> {
        if mic_positions.len() < 2 {
            return Err(Error::Scene(format!(
                "an array needs at least 2 microphones, got {}",
                mic_positions.len()
            )));
        }
        if mic_positions
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Scene("microphone positions must be finite".into()));
        }
        if !(speed_of_sound.is_finite() && speed_of_sound > 0.0) {
            return Err(Error::Scene(format!(
                "speed of sound must be positive, got {speed_of_sound}"
            )));
        }
        let n = mic_positions.len() as f64;
        let reference_point = [
            mic_positions.iter().map(|p| p[0]).sum::<f64>() / n,
            mic_positions.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        Ok(Self {
            mic_positions,
            speed_of_sound,
            reference_point,
        })
    }

    /// Equilateral triangle of side 0.18 m centred on the origin, with the
    /// microphones at polar angles 90°, 210° and 330°.
    pub fn default_triangular() -> Self {
        let radius = DEFAULT_MIC_SPACING / 3f64.sqrt();
        let half = DEFAULT_MIC_SPACING / 2.0;
        let mic_positions = vec![[0.0, radius], [-half, -radius / 2.0], [half, -radius / 2.0]];
        Self {
            mic_positions,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            reference_point: [0.0, 0.0],
        }
    }

    pub fn mic_positions(&self) -> &[Point] {
        &self.mic_positions
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn reference_point(&self) -> Point {
        self.reference_point
    }

    pub fn max_pairwise_distance(&self) -> f64 {
        let mut max = 0.0f64;
        for (i, a) in self.mic_positions.iter().enumerate() {
            for b in &self.mic_positions[i + 1..] {
                max = max.max(distance(a, b));
            }
        }
        max
    }

    /// Frequency above which inter-microphone phase differences wrap.
    pub fn aliasing_frequency(&self) -> f64 {
        self.speed_of_sound / (2.0 * self.max_pairwise_distance())
    }

    /// Arrival delay of a plane wave from `doa_deg` at each microphone,
    /// relative to the reference point. Negative values mean the wavefront
    /// reaches the microphone before the reference point.
    pub fn steering_delays(&self, doa_deg: f64) -> Vec<f64> {
        let (sin, cos) = doa_deg.to_radians().sin_cos();
        self.mic_positions
            .iter()
            .map(|p| {
                let rel = [
                    p[0] - self.reference_point[0],
                    p[1] - self.reference_point[1],
                ];
                -(rel[0] * cos + rel[1] * sin) / self.speed_of_sound
            })
            .collect()
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub signal: Vec<f64>,
    pub fs: u32,
    pub true_doa_deg: f64,
    pub gain: f64,
}

impl SourceSpec {
    pub fn new(signal: Vec<f64>, fs: u32, true_doa_deg: f64, gain: f64) -> Result<Self> {
        let spec = Self {
            signal,
            fs,
            true_doa_deg,
            gain,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.signal.is_empty() {
            return Err(Error::Scene("source signal is empty".into()));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::Scene(format!(
                "source gain must be positive, got {}",
                self.gain
            )));
        }
        if !(-180.0..360.0).contains(&self.true_doa_deg) {
            return Err(Error::Scene(format!(
                "source DOA must lie in [-180, 360), got {}",
                self.true_doa_deg
            )));
        }
        Ok(())
    }
}

/// Ground truth for one simulation. The first source is the source of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePlan {
    pub geometry: ArrayGeometry,
    pub sources: Vec<SourceSpec>,
    pub fs: u32,
    /// Diffuse white noise power relative to the source of interest, in dB.
    /// `None` disables noise.
    pub diffuse_noise_db: Option<f64>,
    pub duration_s: f64,
    pub seed: u64,
}

impl ScenePlan {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.fs as f64).round() as usize
    }

    pub fn soi(&self) -> &SourceSpec {
        &self.sources[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Scene("a scene needs a source of interest".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::Scene(format!("source {i}: {e}")))?;
            if s.fs != self.fs {
                return Err(Error::Scene(format!(
                    "source {i} is sampled at {} Hz but the scene runs at {} Hz",
                    s.fs, self.fs
                )));
            }
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) || self.num_samples() == 0 {
            return Err(Error::Scene(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if let Some(db) = self.diffuse_noise_db {
            if !db.is_finite() {
                return Err(Error::Scene("diffuse noise level must be finite".into()));
            }
        }
        Ok(())
    }

    /// Short content hash used to tie run records to the scene they came from.
    pub fn digest(&self) -> String {
        // FNV-1a over the bit patterns of everything that shapes the render.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in self.geometry.mic_positions() {
            eat(p[0].to_bits());
            eat(p[1].to_bits());
        }
        eat(self.geometry.speed_of_sound().to_bits());
        eat(self.fs as u64);
        eat(self.duration_s.to_bits());
        eat(self.seed);
        eat(self.diffuse_noise_db.map_or(u64::MAX, f64::to_bits));
        for s in &self.sources {
            eat(s.true_doa_deg.to_bits());
            eat(s.gain.to_bits());
            eat(s.signal.len() as u64);
            for x in &s.signal {
                eat(x.to_bits());
            }
        }
        format!("{h:016x}")
    }
}

/// Output of [`render_mixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    /// One row per microphone.
    pub channels: Vec<Vec<f64>>,
    /// The source of interest at the array centre: undelayed, gain-scaled.
    pub reference: Vec<f64>,
    /// The source of interest alone as received by each microphone.
    pub soi_images: Vec<Vec<f64>>,
    pub fs: u32,
}

impl RenderedScene {
    pub fn num_samples(&self) -> usize {
        self.reference.len()
    }
}

/// Windowed-sinc kernel for a delay of `delay` samples. Returns the integer
/// part of the delay and 64 taps indexed from `-31` to `32`: the output is
/// `y[n] = sum_j taps[j + 31] * x[n - shift - j]`.
fn fractional_delay_kernel(delay: f64) -> (i64, [f64; FRACTIONAL_DELAY_TAPS]) {
    let shift = delay.floor();
    let frac = delay - shift;
    let half = (FRACTIONAL_DELAY_TAPS / 2) as f64;
    let mut taps = [0.0; FRACTIONAL_DELAY_TAPS];
    for (idx, tap) in taps.iter_mut().enumerate() {
        let j = idx as f64 - (half - 1.0);
        let arg = j - frac;
        let sinc = if arg == 0.0 {
            1.0
        } else {
            (PI * arg).sin() / (PI * arg)
        };
        let window = if arg.abs() < half {
            0.5 * (1.0 + (PI * arg / half).cos())
        } else {
            0.0
        };
        *tap = sinc * window;
    }
    (shift as i64, taps)
}

/// Delays `signal` by `delay` samples (may be fractional or negative) with a
/// 64-tap Hann-windowed sinc. Samples outside the input are treated as zero.
pub fn fractional_delay(signal: &[f64], delay: f64) -> Vec<f64> {
    let (shift, taps) = fractional_delay_kernel(delay);
    let n = signal.len() as i64;
    let first = -(FRACTIONAL_DELAY_TAPS as i64 / 2 - 1);
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, tap) in taps.iter().enumerate() {
                let j = first + k as i64;
                let m = i - shift - j;
                if (0..n).contains(&m) {
                    acc += tap * signal[m as usize];
                }
            }
            acc
        })
        .collect()
}

fn fit_length(signal: &[f64], len: usize) -> Vec<f64> {
    signal.iter().copied().cycle().take(len).collect()
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Renders the multichannel far-field mixture described by `plan`.
///
/// Sources shorter than the scene are looped; longer ones are truncated.
pub fn render_mixture(plan: &ScenePlan) -> Result<RenderedScene> {
    plan.validate()?;
    let n = plan.num_samples();
    let fs = plan.fs as f64;
    let m = plan.geometry.num_mics();
    let mut channels = vec![vec![0.0; n]; m];
    let mut soi_images = Vec::with_capacity(m);

    for (s_idx, source) in plan.sources.iter().enumerate() {
        let dry: Vec<f64> = fit_length(&source.signal, n)
            .into_iter()
            .map(|x| x * source.gain)
            .collect();
        for (ch, delay) in plan
            .geometry
            .steering_delays(source.true_doa_deg)
            .into_iter()
            .enumerate()
        {
            let image = fractional_delay(&dry, delay * fs);
            for (acc, v) in channels[ch].iter_mut().zip(&image) {
                *acc += v;
            }
            if s_idx == 0 {
                soi_images.push(image);
            }
        }
    }

    let reference: Vec<f64> = fit_length(&plan.soi().signal, n)
        .into_iter()
        .map(|x| x * plan.soi().gain)
        .collect();

    if let Some(db) = plan.diffuse_noise_db {
        let sigma = (mean_power(&reference) * 10f64.powf(db / 10.0)).sqrt();
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for ch in channels.iter_mut() {
                for v in ch.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }

    Ok(RenderedScene {
        channels,
        reference,
        soi_images,
        fs: plan.fs,
    })
}

/// Speech-like test signal: band-limited (300–3400 Hz) noise shaped by a
/// syllabic envelope, in bursts of 0.5–2.0 s separated by 0.2–0.8 s pauses.
/// Peak amplitude is 0.5.
pub fn synth_speech_like(duration_s: f64, fs: u32, seed: u64) -> Result<Vec<f64>> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Config(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let n = (duration_s * fs as f64).round() as usize;
    if n == 0 {
        return Err(Error::Config("duration shorter than one sample".into()));
    }
    let fs_f = fs as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let band = bandpass(&noise, fs_f, 300.0, 3400.0);

    let burst_len = Uniform::new(0.5, 2.0).expect("valid range");
    let pause_len = Uniform::new(0.2, 0.8).expect("valid range");
    let syllable_rate = Uniform::new(3.0, 6.0).expect("valid range");
    let phase = Uniform::new(0.0, PI).expect("valid range");
    let fade = 0.02 * fs_f;

    let mut envelope = vec![0.0; n];
    let mut t = (pause_len.sample(&mut rng) * fs_f) as usize;
    while t < n {
        let len = (burst_len.sample(&mut rng) * fs_f) as usize;
        let rate = syllable_rate.sample(&mut rng);
        let phi = phase.sample(&mut rng);
        for (k, e) in envelope.iter_mut().skip(t).take(len).enumerate() {
            let local = k as f64 / fs_f;
            let syllable = 0.35 + 0.65 * (PI * rate * local + phi).sin().powi(2);
            let edge = (k as f64).min((len - k) as f64);
            let ramp = if edge < fade {
                0.5 * (1.0 - (PI * edge / fade).cos())
            } else {
                1.0
            };
            *e = syllable * ramp;
        }
        t += len + (pause_len.sample(&mut rng) * fs_f) as usize;
    }

    let mut out: Vec<f64> = band.iter().zip(&envelope).map(|(x, e)| x * e).collect();
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        let scale = 0.5 / peak;
        out.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(out)
}

/// Brick-wall band-pass via a full-length FFT.
fn bandpass(x: &[f64], fs: f64, low_hz: f64, high_hz: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64;
        let f = bin * fs / n as f64;
        if f < low_hz || f > high_hz {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_geometry_is_equilateral_with_0_18_m_sides() {
        let g = ArrayGeometry::default_triangular();
        let p = g.mic_positions();
        assert_eq!(p.len(), 3);
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((distance(&p[i], &p[j]) - 0.18).abs() < 1e-12);
        }
        let c = g.reference_point();
        assert_eq!(c, [0.0, 0.0]);
        let sum = p.iter().fold([0.0, 0.0], |a, q| [a[0] + q[0], a[1] + q[1]]);
        assert!(sum[0].abs() < 1e-9 && sum[1].abs() < 1e-9);
        assert!(p[0][0].abs() < 1e-12);
        assert!((p[0][1] - 0.10392).abs() < 1e-5);
    }

    #[test]
    fn geometry_rejects_degenerate_arrays() {
        assert!(ArrayGeometry::new(vec![[0.0, 0.0]], 343.0).is_err());
        assert!(ArrayGeometry::new(vec![[0.0, 0.0], [f64::NAN, 0.0]], 343.0).is_err());
        let g = ArrayGeometry::new(vec![[1.0, 1.0], [3.0, 1.0]], 343.0).unwrap();
        assert_eq!(g.reference_point(), [2.0, 1.0]);
    }

    #[test]
    fn steering_delay_examples() {
        let g = ArrayGeometry::default_triangular();
        assert_eq!(g.steering_delays(0.0)[0], 0.0);
        let d90 = g.steering_delays(90.0)[0];
        assert!((d90 - (-0.18 / 3f64.sqrt() / 343.0)).abs() < 1e-15);
        assert!((d90 + 3.0298e-4).abs() < 1e-8);
        let a = g.steering_delays(37.0);
        let b = g.steering_delays(37.0 + 360.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_delay_is_identity() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        let y = fractional_delay(&x, 0.0);
        assert!(rel_rms(&y, &x) < 1e-12);
    }

    #[test]
    fn integer_delay_shifts() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let y = fractional_delay(&x, 3.0);
        for i in 3..100 {
            assert!((y[i] - x[i - 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn fractional_delay_round_trip() {
        let fs = 16_000;
        let x = synth_speech_like(2.0, fs, 3).unwrap();
        let tau = 4.37;
        let back = fractional_delay(&fractional_delay(&x, tau), -tau);
        let edge = 64;
        let err = rel_rms(&back[edge..x.len() - edge], &x[edge..x.len() - edge]);
        assert!(err <= 1e-3, "round trip error {err}");
    }

    #[test]
    fn synth_length_and_peak() {
        let x = synth_speech_like(10.0, 16_000, 1).unwrap();
        assert_eq!(x.len(), 160_000);
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-6);
        assert!(synth_speech_like(0.0, 16_000, 1).is_err());
    }

    fn plan_with(sources: Vec<SourceSpec>, noise: Option<f64>) -> ScenePlan {
        ScenePlan {
            geometry: ArrayGeometry::default_triangular(),
            sources,
            fs: 16_000,
            diffuse_noise_db: noise,
            duration_s: 2.0,
            seed: 9,
        }
    }

    #[test]
    fn broadside_channel_matches_reference() {
        let sig = synth_speech_like(2.0, 16_000, 4).unwrap();
        let plan = plan_with(vec![SourceSpec::new(sig, 16_000, 0.0, 1.0).unwrap()], None);
        let r = render_mixture(&plan).unwrap();
        assert!(rel_rms(&r.channels[0], &r.reference) <= 1e-3);
    }

    #[test]
    fn incoherent_sources_add_in_power() {
        let a = synth_speech_like(2.0, 16_000, 5).unwrap();
        let b = synth_speech_like(2.0, 16_000, 6).unwrap();
        let sa = SourceSpec::new(a, 16_000, 0.0, 1.0).unwrap();
        let sb = SourceSpec::new(b, 16_000, 90.0, 1.0).unwrap();
        let both = render_mixture(&plan_with(vec![sa.clone(), sb.clone()], None)).unwrap();
        let only_a = render_mixture(&plan_with(vec![sa], None)).unwrap();
        let only_b = render_mixture(&plan_with(vec![sb], None)).unwrap();
        for ch in 0..3 {
            let p = mean_power(&both.channels[ch]);
            let sum = mean_power(&only_a.channels[ch]) + mean_power(&only_b.channels[ch]);
            assert!((p - sum).abs() / sum < 0.1, "channel {ch}: {p} vs {sum}");
        }
    }

    #[test]
    fn render_is_deterministic_and_rejects_mismatched_rates() {
        let sig = synth_speech_like(1.0, 16_000, 8).unwrap();
        let plan = plan_with(
            vec![SourceSpec::new(sig.clone(), 16_000, 10.0, 1.0).unwrap()],
            Some(-20.0),
        );
        assert_eq!(
            render_mixture(&plan).unwrap(),
            render_mixture(&plan).unwrap()
        );
        let bad = plan_with(
            vec![
                SourceSpec::new(sig.clone(), 16_000, 10.0, 1.0).unwrap(),
                SourceSpec::new(sig, 8_000, 90.0, 1.0).unwrap(),
            ],
            None,
        );
        assert!(matches!(render_mixture(&bad), Err(Error::Scene(_))));
    }

    #[test]
    fn zero_gain_source_renders_silence() {
        let sig = synth_speech_like(1.0, 16_000, 8).unwrap();
        // Gains must be positive for a SourceSpec, so emulate a zero-gain
        // source with a silent signal.
        let plan = plan_with(
            vec![SourceSpec::new(vec![0.0; sig.len()], 16_000, 30.0, 1.0).unwrap()],
            None,
        );
        let r = render_mixture(&plan).unwrap();
        assert!(r.channels.iter().flatten().all(|&v| v == 0.0));
    }
}
