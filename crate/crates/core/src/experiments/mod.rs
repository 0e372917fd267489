//! Experiment drivers behind the `tiltdiff` binary.
//!
//! Each driver takes an [`ExperimentConfig`], derives every random stream
//! from the configured seeds, and writes its artifacts (CSV or JSON) into the
//! output directory together with a [`RunManifest`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::diffusion::{NoiseSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::scoregap::BatteryConfig;
use crate::synth::{
    gen_beta_mix_spec, ground_truth_tilted, identity_g_max, sample_beta_mix, BetaMixSpec,
    Normalization, OracleStrategy,
};
use crate::tilt::TiltSpec;
use crate::rng::seeded;

pub mod compare;
pub mod convergence;
pub mod pipeline;
pub mod report;

/// Base law the experiments draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Target {
    /// Bounded correlated Beta mixture; an explicit `spec` wins over the
    /// randomly generated one.
    BetaMix {
        d: usize,
        #[serde(default)]
        normalization: Normalization,
        #[serde(default)]
        spec_seed: u64,
        #[serde(default)]
        spec: Option<BetaMixSpec>,
    },
    /// Isotropic Gaussian `N(mean, sd² I)`; its exponential tilt is the
    /// Gaussian shifted by `sd² θ`.
    Gaussian { mean: Vec<f64>, sd: f64 },
    /// Fair coin on `{0, 1}`; exact fixture for the bounds report.
    FairCoin,
    /// A fixed dataset; no ground-truth oracle.
    Dataset { path: PathBuf },
}

impl Default for Target {
    fn default() -> Self {
        Target::BetaMix {
            d: 10,
            normalization: Normalization::RowStochastic,
            spec_seed: 0,
            spec: None,
        }
    }
}

impl Target {
    pub fn dim(&self) -> Result<usize> {
        Ok(match self {
            Target::BetaMix { d, spec, .. } => spec.as_ref().map_or(*d, |s| s.d),
            Target::Gaussian { mean, .. } => mean.len(),
            Target::FairCoin => 1,
            Target::Dataset { path } => Dataset::load_csv(path)?.d(),
        })
    }

    pub fn beta_mix_spec(&self) -> Result<Option<BetaMixSpec>> {
        match self {
            Target::BetaMix {
                d,
                normalization,
                spec_seed,
                spec,
            } => {
                if let Some(s) = spec {
                    s.validate()?;
                    return Ok(Some(s.clone()));
                }
                let mut s = gen_beta_mix_spec(*d, &mut seeded(*spec_seed), *normalization)?;
                s.seed = Some(*spec_seed);
                Ok(Some(s))
            }
            _ => Ok(None),
        }
    }

    /// `g_max` for the identity statistic when the support is bounded.
    pub fn g_max(&self) -> Result<Option<f64>> {
        Ok(match self {
            Target::BetaMix { .. } => self.beta_mix_spec()?.map(|s| identity_g_max(&s)),
            Target::FairCoin => Some(1.0),
            _ => None,
        })
    }

    /// Known support box, used to lay out histogram grids.
    pub fn support(&self) -> Result<Option<Vec<(f64, f64)>>> {
        Ok(match self.beta_mix_spec()? {
            Some(s) if s.normalization == Normalization::RowStochastic => Some(vec![(0.0, 1.0); s.d]),
            _ => None,
        })
    }

    /// `n` i.i.d. draws from the base law (or the stored dataset itself).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        match self {
            Target::BetaMix { .. } => {
                let spec = self.beta_mix_spec()?.expect("beta mix target");
                sample_beta_mix(&spec, n, rng)
            }
            Target::Gaussian { mean, sd } => gaussian(mean, *sd, n, rng),
            Target::FairCoin => {
                let v: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
                Dataset::from_scalars(&v)
            }
            Target::Dataset { path } => Dataset::load_csv(path),
        }
    }

    /// Exact draws from the exponentially tilted base law, with the
    /// acceptance rate of the sampler (1 when no rejection is involved).
    pub fn oracle<R: Rng + ?Sized>(&self, tilt: &TiltSpec, n: usize, rng: &mut R) -> Result<(Dataset, f64)> {
        match self {
            Target::BetaMix { .. } => {
                let spec = self.beta_mix_spec()?.expect("beta mix target");
                let gt = ground_truth_tilted(&spec, tilt, n, rng, OracleStrategy::Factorized)?;
                Ok((gt.samples, gt.acceptance_rate))
            }
            Target::Gaussian { mean, sd } => {
                if tilt.g.as_matrix(mean.len()).is_none() {
                    return Err(Error::OracleUnavailable);
                }
                let g = tilt.g.as_matrix(mean.len()).expect("checked");
                let shift = g.t().dot(&ndarray::Array1::from(tilt.theta.clone()));
                let m: Vec<f64> = mean.iter().zip(&shift).map(|(m, s)| m + sd * sd * s).collect();
                Ok((gaussian(&m, *sd, n, rng)?, 1.0))
            }
            _ => Err(Error::OracleUnavailable),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(mean: &[f64], sd: f64, n: usize, rng: &mut R) -> Result<Dataset> {
    if !(sd > 0.0) || n == 0 {
        return Err(Error::invalid("gaussian target needs sd > 0 and n > 0"));
    }
    let pts = ndarray::Array2::from_shape_fn((n, mean.len()), |(_, k)| {
        mean[k] + sd * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub p: f64,
    pub n_proj: usize,
    pub bins: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            n_proj: crate::transport::DEFAULT_PROJECTIONS,
            bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    /// Compute bound columns at all; 1-D configs usually cannot satisfy the
    /// regime conditions.
    pub enabled: bool,
    pub p: f64,
    pub q: f64,
    pub c: f64,
    /// Base-law draws used to estimate the MGF constants when no exact
    /// fixture is available.
    pub mc_samples: usize,
    /// Boxes `A` for the CLT variance and discrepancy bound, as per-axis
    /// `[lo, hi)` intervals.
    pub boxes: Vec<Vec<(f64, f64)>>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 2.0,
            q: 4.0,
            c: 1.0,
            mc_samples: 200_000,
            boxes: Vec::new(),
        }
    }
}

/// One JSON file describes any experiment; fields a command does not use are
/// ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub target: Target,
    /// Tilt parameter; empty means `(2, …, 2)` in the target dimension.
    pub theta: Vec<f64>,
    /// Scalar multiples of the all-ones vector swept by `bounded-target`.
    pub theta_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    /// Resample size `m`; defaults to the base sample size.
    pub resample_size: Option<usize>,
    /// Size of each ground-truth draw; defaults to the compared sample size.
    pub oracle_size: Option<usize>,
    /// Base sample size for `bounded-target` and `train`.
    pub samples: usize,
    pub seeds: Vec<u64>,
    pub metric: MetricConfig,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    pub bounds: BoundConfig,
    pub battery: BatteryConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "convergence".into(),
            target: Target::default(),
            theta: Vec::new(),
            theta_grid: vec![1.0, 2.0, 2.5],
            n_grid: vec![100, 1_000, 10_000, 100_000],
            resample_size: None,
            oracle_size: None,
            samples: 10_000,
            seeds: (0..10).collect(),
            metric: MetricConfig::default(),
            schedule: NoiseSchedule::default(),
            train: TrainConfig::default(),
            bounds: BoundConfig::default(),
            battery: BatteryConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must be non-empty"));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be non-empty and strictly ascending"));
        }
        if self.n_grid[0] == 0 || self.samples == 0 {
            return Err(Error::invalid("sample sizes must be positive"));
        }
        if self.resample_size == Some(0) || self.oracle_size == Some(0) {
            return Err(Error::invalid("resample_size and oracle_size must be positive"));
        }
        if !(self.metric.p >= 1.0) || self.metric.n_proj == 0 || self.metric.bins == 0 {
            return Err(Error::invalid("metric needs p >= 1, n_proj >= 1, bins >= 1"));
        }
        self.schedule.validate()?;
        self.train.validate()?;
        if self.bounds.enabled && !(self.bounds.q > self.bounds.p) {
            return Err(Error::Regime(format!(
                "q > p (q = {}, p = {})",
                self.bounds.q, self.bounds.p
            )));
        }
        let d = self.target.dim()?;
        if !self.theta.is_empty() && self.theta.len() != d {
            return Err(Error::invalid(format!(
                "theta has {} entries, target dimension is {d}",
                self.theta.len()
            )));
        }
        Ok(())
    }

    /// Exponential tilt `θᵀ x`, carrying `g_max` when the support is bounded.
    pub fn tilt(&self) -> Result<TiltSpec> {
        let d = self.target.dim()?;
        let theta = if self.theta.is_empty() {
            vec![2.0; d]
        } else {
            self.theta.clone()
        };
        self.tilt_for(theta)
    }

    pub fn tilt_for(&self, theta: Vec<f64>) -> Result<TiltSpec> {
        let mut tilt = TiltSpec::exponential(theta);
        if let Some(g) = self.target.g_max()? {
            tilt = tilt.with_g_max(g);
        }
        tilt.validate()?;
        Ok(tilt)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    pub versions: Versions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub tiltdiff: String,
    pub checkpoint_format: u32,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, started: Instant, artifacts: Vec<PathBuf>) -> Self {
        Self {
            command: command.into(),
            config_hash: config.hash(),
            seeds: config.seeds.clone(),
            artifacts,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            versions: Versions {
                tiltdiff: env!("CARGO_PKG_VERSION").into(),
                checkpoint_format: pipeline::CHECKPOINT_FORMAT,
            },
        }
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_json(&path, self)?;
        Ok(path)
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Formats an optional value for CSV; `None` becomes an empty cell.
pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Runs the score-gap battery and writes `scoregap.csv`. Any violated row
/// turns into [`Error::InequalityViolation`] after the CSV is written.
pub fn run_scoregap(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    ensure_dir(&config.out_dir)?;
    let rows = crate::scoregap::run_battery(&config.battery)?;
    let path = config.out_dir.join("scoregap.csv");
    let mut f = fs::File::create(&path)?;
    crate::scoregap::write_battery_csv(&rows, &mut f)?;
    let manifest = RunManifest::new("scoregap", config, started, vec![path.clone()]).write(&config.out_dir)?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.holds)
        .map(|r| format!("instance {} {}", r.instance, r.variant.name()))
        .collect();
    if !failed.is_empty() {
        return Err(Error::InequalityViolation(failed.join(", ")));
    }
    Ok(vec![path, manifest])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json_str(r#"{"seeds": [3], "n_grid": [10, 20]}"#).unwrap();
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.metric.p, 2.0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            r#"{"seeds": []}"#,
            r#"{"n_grid": [100, 10]}"#,
            r#"{"bounds": {"p": 4, "q": 2}}"#,
            r#"{"theta": [1.0]}"#,
            r#"{"unknown_field": 1}"#,
        ] {
            assert!(ExperimentConfig::from_json_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn gaussian_oracle_is_shifted() {
        let t = Target::Gaussian {
            mean: vec![0.0],
            sd: 2.0,
        };
        let (ds, rate) = t
            .oracle(&TiltSpec::exponential(vec![0.5]), 40_000, &mut seeded(0))
            .unwrap();
        assert_eq!(rate, 1.0);
        assert!((ds.mean()[0] - 2.0).abs() < 0.05);
    }

    #[test]
    fn default_tilt_is_two_times_ones() {
        let tilt = ExperimentConfig::default().tilt().unwrap();
        assert_eq!(tilt.theta, vec![2.0; 10]);
        assert!((tilt.g_max.unwrap() - 10f64.sqrt()).abs() < 1e-15);
    }
}
