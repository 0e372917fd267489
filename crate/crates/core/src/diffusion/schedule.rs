use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// OU forward process `dx = −η x dt + √2 σ db` on `[0, T]`, with a uniform
/// grid of `steps` substeps for the reverse pass.
///
/// The marginal given `x_0` is `N(e^{−ηt} x_0, (σ²/η)(1 − e^{−2ηt}) I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub eta: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            eta: 1.0,
            sigma: 1.0,
            horizon: 5.0,
            steps: 500,
        }
    }
}

impl NoiseSchedule {
    pub fn new(eta: f64, sigma: f64, horizon: f64, steps: usize) -> Result<Self> {
        let s = Self {
            eta,
            sigma,
            horizon,
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("sigma", self.sigma), ("horizon", self.horizon)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        Ok(())
    }

    /// `e^{−ηt}`.
    pub fn mean_coeff(&self, t: f64) -> f64 {
        (-self.eta * t).exp()
    }

    /// `(σ²/η)(1 − e^{−2ηt})`.
    pub fn noise_var(&self, t: f64) -> f64 {
        self.stationary_var() * -(-2.0 * self.eta * t).exp_m1()
    }

    /// `σ²/η`, the limit of `noise_var` as `t → ∞`.
    pub fn stationary_var(&self) -> f64 {
        self.sigma * self.sigma / self.eta
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Draws `x_t = e^{−ηt} x_0 + √noise_var(t) ε`; returns `(x_t, ε)`.
pub fn forward_noise<R: Rng + ?Sized>(
    x0: ArrayView1<'_, f64>,
    t: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if !(0.0..=schedule.horizon).contains(&t) {
        return Err(Error::invalid(format!(
            "t = {t} outside [0, {}]",
            schedule.horizon
        )));
    }
    let eps: Array1<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let xt = &x0 * schedule.mean_coeff(t) + &eps * schedule.noise_var(t).sqrt();
    Ok((xt, eps))
}
