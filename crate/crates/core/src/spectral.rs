//! Hann-windowed STFT with 75% overlap and weighted overlap-add synthesis.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// 0.064 s at 16 kHz.
pub const DEFAULT_WINDOW_LEN: usize = 1024;

/// Complex half-spectra of one channel, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyGrid {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub window_len: usize,
    pub hop: usize,
    pub fs: u32,
}

impl TimeFrequencyGrid {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.fs as f64 / self.window_len as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c *= factor);
        out
    }

    fn check(&self) -> Result<()> {
        if self.window_len == 0
            || self.hop == 0
            || self.bins != self.window_len / 2 + 1
            || !self.window_len.is_multiple_of(self.hop)
            || self.frames == 0
            || self.data.len() != self.frames * self.bins
        {
            return Err(Error::Dimension(format!(
                "inconsistent grid: {} frames x {} bins, window {}, hop {}, {} coefficients",
                self.frames,
                self.bins,
                self.window_len,
                self.hop,
                self.data.len()
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window, which sums to a constant at hop = len/4.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Frame-level analysis/synthesis shared by the batch transforms and the
/// streaming beamformer.
#[derive(Clone)]
pub struct StftEngine {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine")
            .field("window_len", &self.window_len)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftEngine {
    /// `window_len` must be a power of two; the hop is a quarter window.
    pub fn new(window_len: usize) -> Result<Self> {
        if window_len < 4 || !window_len.is_power_of_two() {
            return Err(Error::Config(format!(
                "window length must be a power of two >= 4, got {window_len}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            window_len,
            hop: window_len / 4,
            window: hann(window_len),
            forward: planner.plan_fft_forward(window_len),
            inverse: planner.plan_fft_inverse(window_len),
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Number of frames that fit entirely inside `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            1 + (len - self.window_len) / self.hop
        }
    }

    /// Windowed DFT of `segment` (exactly one window long), half spectrum.
    pub fn analyze(&self, segment: &[f64], out: &mut Vec<Complex64>) {
        debug_assert_eq!(segment.len(), self.window_len);
        let mut buf: Vec<Complex64> = segment
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(self.bins());
        *out = buf;
    }

    /// Inverse DFT of a half spectrum, multiplied by the synthesis window.
    /// The imaginary parts of the DC and Nyquist bins are ignored.
    pub fn synthesize(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let n = self.window_len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..spectrum.len()].copy_from_slice(spectrum);
        for k in 1..n / 2 {
            buf[n - k] = spectrum[k].conj();
        }
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter()
            .zip(&self.window)
            .map(|(c, w)| c.re * scale * w)
            .collect()
    }

    /// Sum of squared synthesis windows over all frames for an output of
    /// `frames` frames.
    pub fn window_normalization(&self, frames: usize) -> Vec<f64> {
        let len = (frames.max(1) - 1) * self.hop + self.window_len;
        let mut norm = vec![0.0; len];
        for t in 0..frames {
            for (n, w) in self.window.iter().enumerate() {
                norm[t * self.hop + n] += w * w;
            }
        }
        norm
    }
}

/// Divides an overlap-added signal by the window normalization; samples
/// no window covers stay zero.
pub(crate) fn normalize(acc: f64, norm: f64) -> f64 {
    if norm > 1e-12 {
        acc / norm
    } else {
        0.0
    }
}

pub fn stft(signal: &[f64], window_len: usize, hop: usize, fs: u32) -> Result<TimeFrequencyGrid> {
    let engine = StftEngine::new(window_len)?;
    if hop != engine.hop() {
        return Err(Error::Config(format!(
            "hop must be a quarter of the window ({}), got {hop}",
            engine.hop()
        )));
    }
    if signal.len() < window_len {
        return Err(Error::SignalTooShort {
            needed: window_len,
            got: signal.len(),
        });
    }
    let frames = engine.frames_for(signal.len());
    let bins = engine.bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut spec = Vec::new();
    for t in 0..frames {
        engine.analyze(&signal[t * hop..t * hop + window_len], &mut spec);
        data.extend_from_slice(&spec);
    }
    Ok(TimeFrequencyGrid {
        frames,
        bins,
        data,
        window_len,
        hop,
        fs,
    })
}

/// Weighted overlap-add inverse of [`stft`]; output length is
/// `(frames - 1) * hop + window_len`.
pub fn istft(grid: &TimeFrequencyGrid) -> Result<Vec<f64>> {
    grid.check()?;
    let engine = StftEngine::new(grid.window_len)?;
    if grid.hop != engine.hop() {
        return Err(Error::Dimension(format!(
            "grid hop {} does not match window {}",
            grid.hop, grid.window_len
        )));
    }
    let norm = engine.window_normalization(grid.frames);
    let mut out = vec![0.0; norm.len()];
    for t in 0..grid.frames {
        let frame = engine.synthesize(grid.frame(t));
        for (o, v) in out[t * grid.hop..].iter_mut().zip(&frame) {
            *o += v;
        }
    }
    Ok(out
        .into_iter()
        .zip(&norm)
        .map(|(acc, &n)| normalize(acc, n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn bin_centred_sine_concentrates_energy() {
        let (n, k, fs) = (1024, 37, 16_000);
        let f = k as f64 * fs as f64 / n as f64;
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * PI * f * i as f64 / fs as f64).sin())
            .collect();
        let g = stft(&x, n, n / 4, fs).unwrap();
        for t in 0..g.frames {
            let frame = g.frame(t);
            let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
            // Hann main lobe: bins k-1..=k+1.
            let lobe: f64 = frame[k - 1..=k + 1].iter().map(|c| c.norm_sqr()).sum();
            assert!(lobe / total >= 0.9, "frame {t}: {}", lobe / total);
            assert!(frame[k].norm_sqr() > frame[k - 1].norm_sqr());
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let g = stft(&vec![0.0; 3000], 1024, 256, 16_000).unwrap();
        assert!(g.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn parseval_per_frame() {
        let x = noise(2048, 1);
        let g = stft(&x, 1024, 256, 16_000).unwrap();
        let w = hann(1024);
        for t in 0..g.frames {
            let seg = &x[t * 256..t * 256 + 1024];
            let time_energy: f64 = seg.iter().zip(&w).map(|(s, w)| (s * w).powi(2)).sum();
            // Half spectrum: interior bins count twice.
            let frame = g.frame(t);
            let mut freq_energy = frame[0].norm_sqr() + frame[512].norm_sqr();
            freq_energy += 2.0 * frame[1..512].iter().map(|c| c.norm_sqr()).sum::<f64>();
            freq_energy /= 1024.0;
            assert!((freq_energy - time_energy).abs() / time_energy < 1e-6);
        }
    }

    #[test]
    fn perfect_reconstruction_interior() {
        let x = noise(16_000, 2);
        let g = stft(&x, 1024, 256, 16_000).unwrap();
        let y = istft(&g).unwrap();
        assert_eq!(y.len(), (g.frames - 1) * 256 + 1024);
        let end = y.len() - 1024;
        assert!(rel_rms(&y[1024..end], &x[1024..end]) < 1e-6);
    }

    #[test]
    fn scaling_the_grid_scales_the_output() {
        let x = noise(4096, 3);
        let g = stft(&x, 1024, 256, 16_000).unwrap();
        let y = istft(&g).unwrap();
        let y2 = istft(&g.scaled(2.0)).unwrap();
        for (a, b) in y.iter().zip(&y2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_is_a_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (frames, bins) = (12, 513);
        let mut data: Vec<Complex64> = (0..frames * bins)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        for t in 0..frames {
            data[t * bins].im = 0.0;
            data[t * bins + bins - 1].im = 0.0;
        }
        let g = TimeFrequencyGrid {
            frames,
            bins,
            data,
            window_len: 1024,
            hop: 256,
            fs: 16_000,
        };
        let p1 = stft(&istft(&g).unwrap(), 1024, 256, 16_000).unwrap();
        let p2 = stft(&istft(&p1).unwrap(), 1024, 256, 16_000).unwrap();
        assert_eq!(p1.frames, frames);
        let num: f64 = p1
            .data
            .iter()
            .zip(&p2.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = p1.data.iter().map(|a| a.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            stft(&[0.0; 100], 1024, 256, 16_000),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(stft(&[0.0; 2000], 1000, 250, 16_000).is_err());
        assert!(stft(&[0.0; 2000], 1024, 512, 16_000).is_err());
        let mut g = stft(&[0.0; 2000], 1024, 256, 16_000).unwrap();
        g.data.pop();
        assert!(matches!(istft(&g), Err(Error::Dimension(_))));
    }
}
