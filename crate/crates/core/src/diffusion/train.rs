use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{DenoiserModel, ModelConfig, Standardizer, TrainBatch};
use super::schedule::NoiseSchedule;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tilt::{plugin_measure, resample, TiltSpec};

/// Optimisation settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step as a fraction of `learning_rate`
    /// (cosine decay); 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Record the minibatch loss every `log_every` steps.
    pub log_every: usize,
    /// Training times are drawn from `[t_min_fraction · T, T]`.
    pub t_min_fraction: f64,
    /// Size of the resampled training set; defaults to the dataset size.
    pub resample_size: Option<usize>,
    /// Decay of an exponential moving average of the parameters, returned in
    /// place of the last iterate; 0 disables it. The effective decay at step
    /// `k` is `min(ema_decay, (1 + k) / (10 + k))`.
    pub ema_decay: f64,
    /// Train on per-coordinate standardized data; samples are mapped back.
    pub standardize: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 4000,
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            log_every: 50,
            t_min_fraction: 1e-3,
            resample_size: None,
            ema_decay: 0.0,
            standardize: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 || self.log_every == 0 {
            return Err(Error::invalid("batch_size, steps and log_every must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("learning rate, clip and eps must be positive"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::invalid("final_lr_fraction must lie in (0, 1]"));
        }
        for b in [self.beta1, self.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("moment decay {b} outside (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema_decay must lie in [0, 1)"));
        }
        if !(self.t_min_fraction > 0.0 && self.t_min_fraction < 1.0) {
            return Err(Error::invalid("t_min_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.steps.max(1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos)
    }
}

/// `(step, minibatch ε-MSE)` pairs recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub entries: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for (s, l) in &self.entries {
            writeln!(w, "{s},{l}")?;
        }
        Ok(())
    }

    /// Mean loss over the last `k` recorded entries.
    pub fn tail_mean(&self, k: usize) -> Option<f64> {
        let k = k.min(self.entries.len());
        if k == 0 {
            return None;
        }
        let tail = &self.entries[self.entries.len() - k..];
        Some(tail.iter().map(|(_, l)| l).sum::<f64>() / k as f64)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Bias-corrected update vector for gradient `g`.
    fn step(&mut self, g: &[f64], lr: f64, cfg: &TrainConfig) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&gi, (m, v))| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps)
            })
            .collect()
    }
}

/// Draws a training minibatch from `data`: rows uniformly with replacement,
/// `t ~ U[t_min, T]`, `ε ~ N(0, I)`.
pub fn sample_batch<R: Rng + ?Sized>(
    data: &Dataset,
    schedule: &NoiseSchedule,
    batch_size: usize,
    t_min: f64,
    rng: &mut R,
) -> TrainBatch {
    let d = data.d();
    let pts = data.points();
    let mut x = Array2::zeros((batch_size, d));
    let mut t = Array1::zeros(batch_size);
    let mut eps = Array2::zeros((batch_size, d));
    for b in 0..batch_size {
        let i = rng.random_range(0..data.n());
        let ti = t_min + (schedule.horizon - t_min) * rng.random::<f64>();
        let mean = schedule.mean_coeff(ti);
        let sd = schedule.noise_var(ti).sqrt();
        for k in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            eps[[b, k]] = e;
            x[[b, k]] = mean * pts[[i, k]] + sd * e;
        }
        t[b] = ti;
    }
    TrainBatch { x, t, eps }
}

/// Resamples the dataset by tilt weight and fits an ε-prediction model to the
/// resampled set with Adam.
///
/// Randomness: substream 0 resamples, 1 initialises, 2 drives minibatches.
pub fn train(
    dataset: &Dataset,
    tilt: &TiltSpec,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(DenoiserModel, LossTrace)> {
    schedule.validate()?;
    config.validate()?;
    let measure = plugin_measure(dataset, tilt)?;
    let m = config.resample_size.unwrap_or(dataset.n());
    let resampled = resample(&measure, m, &mut seeded(derive_seed(&[config.seed, 0])))?;
    let mut model = DenoiserModel::new(
        dataset.d(),
        schedule.horizon,
        &config.model,
        &mut seeded(derive_seed(&[config.seed, 1])),
    )?;
    if config.standardize {
        model.standardizer = Some(Standardizer::fit(&resampled));
    }
    fit(model, &resampled, schedule, config)
}

/// Optimises `model` on an already-resampled training set, in the model's
/// standardized coordinates if it carries a standardizer.
pub fn fit(
    mut model: DenoiserModel,
    data: &Dataset,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(DenoiserModel, LossTrace)> {
    config.validate()?;
    model.validate()?;
    let standardized = model.standardizer.as_ref().map(|st| st.forward(data)).transpose()?;
    let data = standardized.as_ref().unwrap_or(data);
    let mut rng = seeded(derive_seed(&[config.seed, 2]));
    let t_min = config.t_min_fraction * schedule.horizon;
    let mut adam = Adam::new(model.num_parameters());
    let mut trace = LossTrace::default();
    let mut ema = (config.ema_decay > 0.0).then(|| model.parameters());
    for step in 0..config.steps {
        let batch = sample_batch(data, schedule, config.batch_size, t_min, &mut rng);
        let (loss, grad) = match model.loss_and_grad(&batch) {
            Ok(v) => v,
            Err(Error::Numerics { .. }) => {
                trace.entries.push((step, f64::NAN));
                return Err(Error::TrainingDiverged { step, trace });
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            trace.entries.push((step, loss));
            return Err(Error::TrainingDiverged { step, trace });
        }
        if step % config.log_every == 0 || step + 1 == config.steps {
            trace.entries.push((step, loss));
        }
        let mut g = grad.flatten();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::TrainingDiverged { step, trace });
        }
        if norm > config.grad_clip {
            let s = config.grad_clip / norm;
            g.iter_mut().for_each(|v| *v *= s);
        }
        let update = adam.step(&g, config.lr_at(step), config);
        model.apply_update(&update);
        if let Some(avg) = ema.as_mut() {
            let k = step as f64;
            let decay = config.ema_decay.min((1.0 + k) / (10.0 + k));
            for (a, p) in avg.iter_mut().zip(model.parameters()) {
                *a = decay * *a + (1.0 - decay) * p;
            }
        }
    }
    if let Some(avg) = ema {
        model.set_parameters(&avg)?;
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 30,
            batch_size: 16,
            log_every: 10,
            model: ModelConfig {
                hidden: vec![8],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = Dataset::from_scalars(&[0.0, 0.5, 1.0, 0.2]).unwrap();
        let t = TiltSpec::exponential(vec![1.0]);
        let s = NoiseSchedule::default();
        let (m1, tr1) = train(&ds, &t, &s, &quick()).unwrap();
        let (m2, tr2) = train(&ds, &t, &s, &quick()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(tr1, tr2);
        assert_eq!(tr1.entries.len(), 4);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig {
            beta1: 1.0,
            ..quick()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let ds = Dataset::from_scalars(&[1e200, -1e200]).unwrap();
        let t = TiltSpec::exponential(vec![0.0]);
        let s = NoiseSchedule::default();
        match train(&ds, &t, &s, &quick()) {
            Err(Error::TrainingDiverged { trace, .. }) => assert!(!trace.entries.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = quick();
        assert!((cfg.lr_at(0) - cfg.learning_rate).abs() < 1e-15);
        let end = cfg.lr_at(cfg.steps);
        assert!((end - cfg.learning_rate * cfg.final_lr_fraction).abs() < 1e-12);
    }
}
