//! Adam-based DOA correction.
//!
//! The optimizer minimizes `q_ceiling - Q` over the steering angle using a
//! finite-difference gradient between the two most recent (angle, quality)
//! pairs. By default the moments are used without bias correction: early
//! steps are larger than in textbook Adam, which keeps the loop from
//! stalling on a noisy objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub eta: f64,
    pub beta_m: f64,
    pub beta_v: f64,
    /// Added to both the gradient and the update denominators.
    pub epsilon: f64,
    pub bias_correction: bool,
    /// Simulated seconds of quality streaming before the first step.
    pub warmup_s: f64,
    pub q_ceiling: f64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            beta_m: 0.9,
            beta_v: 0.999,
            epsilon: 1e-8,
            bias_correction: false,
            warmup_s: 10.0,
            q_ceiling: 100.0,
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        for (name, b) in [("beta_m", self.beta_m), ("beta_v", self.beta_v)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.warmup_s.is_finite() && self.warmup_s >= 0.0) {
            return Err(Error::Config(format!(
                "warmup_s must be non-negative, got {}",
                self.warmup_s
            )));
        }
        if !self.q_ceiling.is_finite() {
            return Err(Error::Config("q_ceiling must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorState {
    /// Current steering angle, degrees.
    pub theta_c: f64,
    /// Previous steering angle, degrees.
    pub theta_p: f64,
    /// Current pivoted quality.
    pub q_c: f64,
    /// Previous pivoted quality.
    pub q_p: f64,
    pub grad_m: f64,
    pub grad_v: f64,
    pub step: u64,
}

impl CorrectorState {
    /// Fresh state at `theta_est`. The previous angle starts at 0 so the
    /// first gradient has a finite, sign-carrying denominator.
    pub fn new(theta_est: f64) -> Self {
        Self {
            theta_c: theta_est,
            theta_p: 0.0,
            q_c: 0.0,
            q_p: 0.0,
            grad_m: 0.0,
            grad_v: 0.0,
            step: 0,
        }
    }

    /// One optimizer step with the latest smoothed quality `q_in` (dB).
    /// Returns the new steering angle. Non-finite input leaves the state
    /// untouched.
    pub fn step(&mut self, q_in: f64, config: &CorrectorConfig) -> Result<f64> {
        if !q_in.is_finite() {
            return Err(Error::Config(format!(
                "quality input must be finite, got {q_in}"
            )));
        }
        self.q_p = self.q_c;
        self.q_c = config.q_ceiling - q_in;
        let grad = (self.q_c - self.q_p) / (self.theta_c - self.theta_p + config.epsilon);
        self.grad_m = config.beta_m * self.grad_m + (1.0 - config.beta_m) * grad;
        self.grad_v = config.beta_v * self.grad_v + (1.0 - config.beta_v) * grad * grad;
        self.theta_p = self.theta_c;
        self.step += 1;
        let (m, v) = if config.bias_correction {
            let t = self.step as i32;
            (
                self.grad_m / (1.0 - config.beta_m.powi(t)),
                self.grad_v / (1.0 - config.beta_v.powi(t)),
            )
        } else {
            (self.grad_m, self.grad_v)
        };
        self.theta_c -= config.eta * m / (v.sqrt() + config.epsilon);
        Ok(self.theta_c)
    }
}

/// Drives a corrector from a quality source on a simulated clock.
///
/// Tick `k` (1-based) happens at `k * t_h` seconds. Ticks up to the end of
/// warm-up emit `theta_est`; later ticks first step the corrector with the
/// latest quality and then emit the new angle. A `None` from the source
/// (no estimate yet) or a non-finite value skips the step.
#[derive(Debug, Clone)]
pub struct CorrectionLoop {
    config: CorrectorConfig,
    state: CorrectorState,
    t_h: f64,
    warmup_ticks: u64,
    tick: u64,
    rejected: Vec<(f64, String)>,
}

impl CorrectionLoop {
    pub fn new(theta_est: f64, config: CorrectorConfig, t_h: f64) -> Result<Self> {
        config.validate()?;
        if !theta_est.is_finite() {
            return Err(Error::Config(format!(
                "theta_est must be finite, got {theta_est}"
            )));
        }
        if !(t_h.is_finite() && t_h > 0.0) {
            return Err(Error::Config(format!("t_h must be positive, got {t_h}")));
        }
        let warmup_ticks = (config.warmup_s / t_h).round() as u64;
        Ok(Self {
            config,
            state: CorrectorState::new(theta_est),
            t_h,
            warmup_ticks,
            tick: 0,
            rejected: Vec::new(),
        })
    }

    pub fn state(&self) -> &CorrectorState {
        &self.state
    }

    pub fn theta(&self) -> f64 {
        self.state.theta_c
    }

    /// Steps skipped because the quality input was missing or not finite,
    /// with the time of the tick.
    pub fn rejected(&self) -> &[(f64, String)] {
        &self.rejected
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.t_h
    }

    /// Advances one tick and returns `(time_s, theta)`.
    pub fn tick(&mut self, quality: Option<f64>) -> (f64, f64) {
        self.tick += 1;
        let time = self.time_of(self.tick);
        if self.tick > self.warmup_ticks {
            match quality {
                Some(q) => {
                    if let Err(e) = self.state.step(q, &self.config) {
                        self.rejected.push((time, e.to_string()));
                    }
                }
                None => self
                    .rejected
                    .push((time, "no quality estimate available yet".into())),
            }
        }
        (time, self.state.theta_c)
    }
}

/// Runs `ticks` ticks against `quality_source(time_s, theta)`, which sees the
/// angle currently being used and returns the latest smoothed quality.
pub fn run_correction_loop(
    mut quality_source: impl FnMut(f64, f64) -> Option<f64>,
    theta_est: f64,
    config: &CorrectorConfig,
    t_h: f64,
    ticks: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut lp = CorrectionLoop::new(theta_est, config.clone(), t_h)?;
    let mut out = Vec::with_capacity(ticks as usize);
    for k in 1..=ticks {
        let q = quality_source(lp.time_of(k), lp.theta());
        out.push(lp.tick(q));
    }
    Ok(out)
}
