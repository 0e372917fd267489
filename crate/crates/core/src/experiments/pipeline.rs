//! Train / sample / evaluate split, with JSON checkpoints in between.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, write_json, ExperimentConfig, RunManifest};
use crate::data::Dataset;
use crate::diffusion::{reverse_sample, train, DenoiserModel, LossTrace, NoiseSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::transport::{sliced_wp_datasets, tv_histogram, HistogramGrid};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Serialized denoiser. Layer weights are stored row-major as decimal text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    /// `(fan_in, fan_out)` per dense layer.
    pub layer_dims: Vec<(usize, usize)>,
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    pub seed: u64,
    pub tilt_theta: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: DenoiserModel, schedule: NoiseSchedule, train: TrainConfig, seed: u64, theta: Vec<f64>) -> Self {
        let layer_dims = model
            .layers
            .iter()
            .map(|l| (l.weight.ncols(), l.weight.nrows()))
            .collect();
        Self {
            format: CHECKPOINT_FORMAT,
            layer_dims,
            model,
            schedule,
            train,
            seed,
            tilt_theta: theta,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads and checks a checkpoint; any inconsistency is an
    /// [`Error::InvalidArgument`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("malformed checkpoint {}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("unsupported checkpoint format {}", ck.format)));
        }
        ck.model.validate()?;
        ck.schedule.validate()?;
        let dims: Vec<(usize, usize)> = ck
            .model
            .layers
            .iter()
            .map(|l| (l.weight.ncols(), l.weight.nrows()))
            .collect();
        if dims != ck.layer_dims {
            return Err(Error::invalid("checkpoint layer_dims disagree with the stored weights"));
        }
        Ok(ck)
    }
}

/// Trains on `config.samples` base draws (or the stored dataset) tilted by
/// the configured `θ`; writes `checkpoint.json` and `loss_trace.csv`.
pub fn run_train(config: &ExperimentConfig) -> Result<(Checkpoint, LossTrace, Vec<PathBuf>)> {
    let started = Instant::now();
    config.validate()?;
    ensure_dir(&config.out_dir)?;
    let seed = config.seeds[0];
    let data = config
        .target
        .sample(config.samples, &mut seeded(derive_seed(&[seed, 0])))?;
    let tilt = config.tilt()?;
    let train_cfg = TrainConfig {
        seed: derive_seed(&[seed, 1]),
        ..config.train.clone()
    };
    let (model, trace) = train(&data, &tilt, &config.schedule, &train_cfg)?;
    let ck = Checkpoint::new(model, config.schedule, train_cfg, seed, tilt.theta.clone());
    let ck_path = config.out_dir.join("checkpoint.json");
    ck.save(&ck_path)?;
    let trace_path = config.out_dir.join("loss_trace.csv");
    let mut f = fs::File::create(&trace_path)?;
    trace.write_csv(&mut f)?;
    let artifacts = vec![ck_path, trace_path];
    let manifest = RunManifest::new("train", config, started, artifacts.clone()).write(&config.out_dir)?;
    let mut all = artifacts;
    all.push(manifest);
    Ok((ck, trace, all))
}

/// Draws `n` reverse-SDE samples from a checkpoint; `steps` overrides the
/// stored discretisation.
pub fn sample_checkpoint(ck: &Checkpoint, n: usize, steps: Option<usize>, seed: u64) -> Result<Dataset> {
    let mut schedule = ck.schedule;
    if let Some(s) = steps {
        schedule.steps = s;
    }
    reverse_sample(&ck.model, &schedule, n, &mut seeded(derive_seed(&[seed, 3])))
}

pub fn run_sample(
    config: &ExperimentConfig,
    checkpoint: &Path,
    n: usize,
    steps: Option<usize>,
) -> Result<(Dataset, Vec<PathBuf>)> {
    let started = Instant::now();
    let ck = Checkpoint::load(checkpoint)?;
    ensure_dir(&config.out_dir)?;
    let ds = sample_checkpoint(&ck, n, steps, config.seeds[0])?;
    let path = config.out_dir.join("samples.csv");
    ds.store_csv(&path)?;
    let manifest = RunManifest::new("sample", config, started, vec![path.clone()]).write(&config.out_dir)?;
    Ok((ds, vec![path, manifest]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_x: usize,
    pub n_y: usize,
    pub d: usize,
    pub p: f64,
    pub n_proj: usize,
    pub sliced_wp: f64,
    /// Histogram TV over a grid covering both sets (`d ≤ 3` only).
    pub tv: Option<f64>,
    pub bins: usize,
}

pub fn evaluate(config: &ExperimentConfig, x: &Dataset, y: &Dataset) -> Result<EvalReport> {
    let m = &config.metric;
    let sw = sliced_wp_datasets(x, y, m.p, m.n_proj, &mut seeded(derive_seed(&[config.seeds[0], 6])))?;
    let tv = if x.d() <= 3 {
        let grid = HistogramGrid::covering(x, y, m.bins)?;
        Some(tv_histogram(x, y, &grid)?.value)
    } else {
        None
    };
    Ok(EvalReport {
        n_x: x.n(),
        n_y: y.n(),
        d: x.d(),
        p: m.p,
        n_proj: m.n_proj,
        sliced_wp: sw,
        tv,
        bins: m.bins,
    })
}

pub fn run_eval(config: &ExperimentConfig, x: &Path, y: &Path) -> Result<(EvalReport, Vec<PathBuf>)> {
    let started = Instant::now();
    let report = evaluate(config, &Dataset::load_csv(x)?, &Dataset::load_csv(y)?)?;
    ensure_dir(&config.out_dir)?;
    let path = config.out_dir.join("eval.json");
    write_json(&path, &report)?;
    let manifest = RunManifest::new("eval", config, started, vec![path.clone()]).write(&config.out_dir)?;
    Ok((report, vec![path, manifest]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ModelConfig;
    use crate::experiments::Target;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            target: Target::Gaussian {
                mean: vec![0.0],
                sd: 1.0,
            },
            theta: vec![0.0],
            samples: 200,
            seeds: vec![4],
            train: TrainConfig {
                steps: 20,
                batch_size: 16,
                log_every: 5,
                model: ModelConfig {
                    hidden: vec![8],
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            },
            schedule: NoiseSchedule::new(1.0, 1.0, 3.0, 20).unwrap(),
            out_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ck, _, files) = run_train(&tiny(dir.path())).unwrap();
        let back = Checkpoint::load(&files[0]).unwrap();
        assert_eq!(ck, back);
        assert_eq!(ck.layer_dims.len(), 2);
    }

    #[test]
    fn malformed_checkpoint_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"format\": 1}").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn eval_of_identical_sets_is_zero() {
        let ds = Dataset::from_scalars(&[0.1, 0.5, 0.9, 2.0]).unwrap();
        let r = evaluate(&ExperimentConfig::default(), &ds, &ds).unwrap();
        assert_eq!(r.sliced_wp, 0.0);
        assert_eq!(r.tv, Some(0.0));
    }
}
