//! Sliced-Wasserstein error of reweighted resampling against exact tilted
//! draws, across sample sizes and seeds, next to the theoretical bounds.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{cell, csv_error, ensure_dir, ExperimentConfig, RunManifest};
use crate::bounds::{
    bound_iid, bound_tilted_bounded, bound_tilted_unbounded, moment_q_tilted, tilt_quantities, Source,
    TiltQuantities,
};
use crate::error::Result;
use crate::rng::{derive_seed, seeded};
use crate::tilt::{effective_sample_size, plugin_measure, resample, TiltSpec};
use crate::transport::sliced_wp_datasets;

pub const HEADER: [&str; 8] = [
    "N",
    "seed",
    "sw_p",
    "bound_unbounded",
    "bound_bounded",
    "bound_iid",
    "ess",
    "acceptance_rate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub seed: u64,
    pub sw_p: f64,
    pub bound_unbounded: Option<f64>,
    pub bound_bounded: Option<f64>,
    pub bound_iid: Option<f64>,
    pub ess: f64,
    pub acceptance_rate: f64,
}

impl ConvergenceRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.seed.to_string(),
            self.sw_p.to_string(),
            cell(self.bound_unbounded),
            cell(self.bound_bounded),
            cell(self.bound_iid),
            self.ess.to_string(),
            self.acceptance_rate.to_string(),
        ]
    }
}

/// Bound constants shared by every row of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInputs {
    pub quantities: TiltQuantities,
    pub mq_theta: f64,
    pub mq_2theta: f64,
}

/// Estimates the MGF constants on `bounds.mc_samples` base draws.
pub fn bound_inputs(config: &ExperimentConfig, tilt: &TiltSpec) -> Result<BoundInputs> {
    let seed = derive_seed(&[config.seeds[0], u64::MAX]);
    let base = config.target.sample(config.bounds.mc_samples, &mut seeded(seed))?;
    let source = Source::MonteCarlo {
        samples: &base,
        seed: Some(seed),
    };
    Ok(BoundInputs {
        quantities: tilt_quantities(source, tilt)?,
        mq_theta: moment_q_tilted(source, tilt, config.bounds.q, 1.0)?,
        mq_2theta: moment_q_tilted(source, tilt, config.bounds.q, 2.0)?,
    })
}

/// The three bound curves at sample size `n`.
pub fn bounds_at(
    config: &ExperimentConfig,
    inputs: &BoundInputs,
    d: usize,
    n: usize,
) -> Result<(f64, Option<f64>, f64)> {
    let b = &config.bounds;
    let n = n as f64;
    let unbounded = bound_tilted_unbounded(n, b.p, b.q, d, &inputs.quantities, inputs.mq_2theta, b.c)?;
    let bounded = match inputs.quantities.v {
        Some(_) => Some(bound_tilted_bounded(n, b.p, b.q, d, &inputs.quantities, inputs.mq_theta, b.c)?),
        None => None,
    };
    let iid = bound_iid(n, b.p, b.q, d, inputs.mq_theta, b.c)?;
    Ok((unbounded, bounded, iid))
}

/// One `(N, seed)` cell. Streams: 0 base sample, 1 resampling, 2 oracle,
/// 3 projections.
pub fn run_cell(config: &ExperimentConfig, tilt: &TiltSpec, n: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let stream = |k: u64| seeded(derive_seed(&[seed, n as u64, k]));
    let base = config.target.sample(n, &mut stream(0))?;
    let measure = plugin_measure(&base, tilt)?;
    let ess = effective_sample_size(&measure);
    let m = config.resample_size.unwrap_or(n);
    let resampled = resample(&measure, m, &mut stream(1))?;
    let (oracle, rate) = config
        .target
        .oracle(tilt, config.oracle_size.unwrap_or(n), &mut stream(2))?;
    let sw = sliced_wp_datasets(&resampled, &oracle, config.metric.p, config.metric.n_proj, &mut stream(3))?;
    Ok((sw, ess, rate))
}

/// Runs the grid, streaming rows to `convergence.csv` (flushed per row so a
/// failure leaves a partial file behind).
pub fn run(config: &ExperimentConfig) -> Result<(Vec<ConvergenceRow>, Vec<PathBuf>)> {
    let started = Instant::now();
    config.validate()?;
    ensure_dir(&config.out_dir)?;
    let tilt = config.tilt()?;
    let d = config.target.dim()?;
    let inputs = if config.bounds.enabled {
        let inputs = bound_inputs(config, &tilt)?;
        // surface regime errors before any sampling
        bounds_at(config, &inputs, d, config.n_grid[0])?;
        Some(inputs)
    } else {
        None
    };
    let path = config.out_dir.join("convergence.csv");
    let mut out = csv::Writer::from_writer(fs::File::create(&path)?);
    out.write_record(HEADER).map_err(csv_error)?;
    out.flush()?;
    let mut rows = Vec::new();
    for &n in &config.n_grid {
        let b = inputs.as_ref().map(|i| bounds_at(config, i, d, n)).transpose()?;
        for &seed in &config.seeds {
            let (sw_p, ess, acceptance_rate) = run_cell(config, &tilt, n, seed)?;
            let row = ConvergenceRow {
                n,
                seed,
                sw_p,
                bound_unbounded: b.map(|b| b.0),
                bound_bounded: b.and_then(|b| b.1),
                bound_iid: b.map(|b| b.2),
                ess,
                acceptance_rate,
            };
            log::info!("N = {n}, seed = {seed}: sw_p = {sw_p:.5}");
            out.write_record(row.record()).map_err(csv_error)?;
            out.flush()?;
            rows.push(row);
        }
    }
    drop(out);
    let manifest = RunManifest::new("convergence", config, started, vec![path.clone()]).write(&config.out_dir)?;
    Ok((rows, vec![path, manifest]))
}

/// Median `sw_p` per grid point, in grid order.
pub fn median_curve(config: &ExperimentConfig, rows: &[ConvergenceRow]) -> Vec<f64> {
    config
        .n_grid
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.sw_p).collect();
            median(&mut v)
        })
        .collect()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
