use super::{DdpmError, Result};

/// Default step count.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
/// Smallest round value putting ᾱ_T below 0.05 at T = 100 (ᾱ_T ≈ 0.0465).
pub const DEFAULT_BETA_END: f64 = 0.06;

/// Linear variance schedule with cumulative products. Steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `β_t` linear from `beta_start` at t = 1 to `beta_end` at t = T.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(DdpmError::InvalidSchedule(format!("need at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DdpmError::InvalidSchedule(format!(
                "require 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let span = (beta_end - beta_start) / (steps - 1) as f64;
        let betas = (0..steps).map(|i| beta_start + span * i as f64).collect();
        Self::from_betas(betas)
    }

    /// Rebuilds a schedule from an explicit β array (e.g. from a checkpoint).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(DdpmError::InvalidSchedule("need at least 2 steps".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DdpmError::InvalidSchedule("every beta must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(DdpmError::StepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Levels `⌈0.1T⌉, ⌈0.25T⌉, ⌈0.5T⌉, ⌈0.75T⌉, T`.
    pub fn default_levels(&self) -> Vec<usize> {
        let t = self.steps() as f64;
        let mut levels: Vec<usize> = [0.1, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|f| ((f * t).ceil() as usize).max(1))
            .collect();
        levels.dedup();
        levels
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_noise(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if x0.len() != eps.len() {
        return Err(DdpmError::Shape(format!(
            "noise has {} values, window has {}",
            eps.len(),
            x0.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect())
}
