use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{denoiser_forward, DenoiserModel};
use super::schedule::NoiseSchedule;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// A (possibly learned) approximation of `∇ ln q_t`.
pub trait ScoreField {
    fn dim(&self) -> usize;

    /// Score at every row of `x`, all at the same forward time `t`.
    fn score_batch(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>>;
}

/// Score implied by an ε-prediction model: `−ε̂(x, t) / √noise_var(t)`.
/// For a standardized model this is the score of the standardized data.
pub struct ModelScore<'a> {
    pub model: &'a DenoiserModel,
    pub schedule: &'a NoiseSchedule,
}

impl ScoreField for ModelScore<'_> {
    fn dim(&self) -> usize {
        self.model.data_dim
    }

    fn score_batch(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let var = self.schedule.noise_var(t);
        if !(var > 0.0) {
            return Err(Error::SingularTime);
        }
        let ts = Array1::from_elem(x.nrows(), t);
        let eps = self.model.forward_batch(x, ts.view())?;
        Ok(eps * (-1.0 / var.sqrt()))
    }
}

/// Closure-backed score, for analytic targets.
pub struct FnScore<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> ScoreField for FnScore<F>
where
    F: Fn(ArrayView2<'_, f64>, f64) -> Array2<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_batch(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        Ok((self.f)(x, t))
    }
}

/// `−ε̂(x, t) / √noise_var(t)` for one point.
pub fn score_from_eps(
    model: &DenoiserModel,
    x: ArrayView1<'_, f64>,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Array1<f64>> {
    let var = schedule.noise_var(t);
    if !(t > 0.0) || !(var > 0.0) {
        return Err(Error::SingularTime);
    }
    Ok(denoiser_forward(model, x, t)? * (-1.0 / var.sqrt()))
}

/// Euler–Maruyama integration of the time-reversed OU process, starting from
/// `N(0, (σ²/η) I)`:
///
/// `x ← x + h (η x + 2σ² s(x, T − kh)) + σ √(2h) ξ`,
///
/// for `k = 0, …, steps − 1`; the final substep adds no noise.
pub fn reverse_sample_with<S: ScoreField + ?Sized, R: Rng + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    schedule.validate()?;
    if schedule.steps < 2 {
        return Err(Error::invalid("reverse sampling needs at least 2 steps"));
    }
    if n == 0 {
        return Err(Error::invalid("requested zero samples"));
    }
    let d = score.dim();
    let h = schedule.step_size();
    let sigma2 = schedule.sigma * schedule.sigma;
    let init_sd = schedule.stationary_var().sqrt();
    let mut x = Array2::from_shape_simple_fn((n, d), || init_sd * rng.sample::<f64, _>(StandardNormal));
    let noise_sd = schedule.sigma * (2.0 * h).sqrt();
    for k in 0..schedule.steps {
        let t = schedule.horizon - k as f64 * h;
        let s = score.score_batch(x.view(), t)?;
        x.zip_mut_with(&s, |xi, si| *xi += h * (schedule.eta * *xi + 2.0 * sigma2 * si));
        if k + 1 < schedule.steps {
            x.mapv_inplace(|xi| xi + noise_sd * rng.sample::<f64, _>(StandardNormal));
        }
        if let Some(row) = x
            .axis_iter(Axis(0))
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::numerics(format!("reverse step {k}, chain {row}")));
        }
    }
    Dataset::new(x)
}

/// Reverse sampling with the score implied by a trained denoiser. Chains run
/// in the model's standardized coordinates and are mapped back at the end.
pub fn reverse_sample<R: Rng + ?Sized>(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    model.validate()?;
    let z = reverse_sample_with(&ModelScore { model, schedule }, schedule, n, rng)?;
    match &model.standardizer {
        Some(st) => st.inverse(&z),
        None => Ok(z),
    }
}
