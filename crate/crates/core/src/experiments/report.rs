//! JSON report of the tilt constants, bound curves, plug-in CLT variances and
//! set-discrepancy bounds for one configuration.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::convergence::{bound_inputs, bounds_at, BoundInputs};
use super::{ensure_dir, write_json, ExperimentConfig, RunManifest, Target};
use crate::bounds::{
    lemma_discrepancy_rhs, mgf, mgf_on_set, moment_q_tilted, plugin_clt_sigma, tilt_quantities,
    FiniteMeasure, Source,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tilt::TiltSpec;
use crate::transport::AxisBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundPoint {
    pub n: usize,
    pub unbounded: f64,
    pub bounded: Option<f64>,
    pub iid: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaPoint {
    pub n: usize,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxReport {
    pub bounds: Vec<(f64, f64)>,
    pub mu_theta: f64,
    pub mu_2theta: f64,
    /// Asymptotic variance of `√n (μ_{n,θ}(A) − μ_θ(A))`.
    pub clt_sigma2: f64,
    pub lemma_rhs: Vec<LemmaPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub fixture: String,
    pub theta: Vec<f64>,
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub c: f64,
    #[serde(flatten)]
    pub inputs: BoundInputs,
    /// Empty when bound curves are disabled in the config.
    pub curves: Vec<BoundPoint>,
    pub boxes: Vec<BoxReport>,
}

fn fixture_name(target: &Target) -> &'static str {
    match target {
        Target::BetaMix { .. } => "beta_mix",
        Target::Gaussian { .. } => "gaussian",
        Target::FairCoin => "fair_coin",
        Target::Dataset { .. } => "dataset",
    }
}

/// Uniform finite measure on a sample, for the exact CLT formula.
fn empirical(ds: &Dataset) -> Result<FiniteMeasure> {
    let n = ds.n();
    let mut masses = vec![1.0 / n as f64; n];
    let rest: f64 = masses[..n - 1].iter().sum();
    masses[n - 1] = 1.0 - rest;
    FiniteMeasure::new(ds.clone(), masses)
}

pub fn build(config: &ExperimentConfig) -> Result<BoundsReport> {
    config.validate()?;
    let tilt: TiltSpec = config.tilt()?;
    let d = config.target.dim()?;
    let coin = FiniteMeasure::fair_coin();
    let mc_seed = derive_seed(&[config.seeds[0], u64::MAX]);
    let (measure, inputs) = match &config.target {
        Target::FairCoin => {
            let source = Source::Exact(&coin);
            let inputs = BoundInputs {
                quantities: tilt_quantities(source, &tilt)?,
                mq_theta: moment_q_tilted(source, &tilt, config.bounds.q, 1.0)?,
                mq_2theta: moment_q_tilted(source, &tilt, config.bounds.q, 2.0)?,
            };
            (coin.clone(), inputs)
        }
        Target::Dataset { .. } => return Err(Error::invalid("bounds report needs a generative target")),
        target => {
            // same draws as the convergence run's bound columns
            let base = target.sample(config.bounds.mc_samples, &mut seeded(mc_seed))?;
            (empirical(&base)?, bound_inputs(config, &tilt)?)
        }
    };
    let curves = if config.bounds.enabled {
        config
            .n_grid
            .iter()
            .map(|&n| {
                let (unbounded, bounded, iid) = bounds_at(config, &inputs, d, n)?;
                Ok(BoundPoint {
                    n,
                    unbounded,
                    bounded,
                    iid,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let source = Source::Exact(&measure);
    let boxes = config
        .bounds
        .boxes
        .iter()
        .map(|b| {
            let set = AxisBox::new(b.clone())?;
            let mu_theta = mgf_on_set(source, &tilt, 1.0, &set)? / mgf(source, &tilt, 1.0)?;
            let mu_2theta = mgf_on_set(source, &tilt, 2.0, &set)? / mgf(source, &tilt, 2.0)?;
            let lemma_rhs = config
                .n_grid
                .iter()
                .map(|&n| {
                    Ok(LemmaPoint {
                        n,
                        rhs: lemma_discrepancy_rhs(n as f64, &inputs.quantities, mu_2theta, mu_theta)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BoxReport {
                bounds: b.clone(),
                mu_theta,
                mu_2theta,
                clt_sigma2: plugin_clt_sigma(&measure, &tilt, &set)?,
                lemma_rhs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundsReport {
        fixture: fixture_name(&config.target).into(),
        theta: tilt.theta.clone(),
        d,
        p: config.bounds.p,
        q: config.bounds.q,
        c: config.bounds.c,
        inputs,
        curves,
        boxes,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<(BoundsReport, Vec<PathBuf>)> {
    let started = Instant::now();
    let report = build(config)?;
    ensure_dir(&config.out_dir)?;
    let path = config.out_dir.join("bounds.json");
    write_json(&path, &report)?;
    let manifest = RunManifest::new("bounds", config, started, vec![path.clone()]).write(&config.out_dir)?;
    Ok((report, vec![path, manifest]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::BoundConfig;

    fn coin(theta: f64) -> ExperimentConfig {
        ExperimentConfig {
            target: Target::FairCoin,
            theta: vec![theta],
            n_grid: vec![100, 1000],
            bounds: BoundConfig {
                p: 0.4,
                q: 2.0,
                boxes: vec![vec![(0.5, 1.5)]],
                ..BoundConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn fair_coin_report_values() {
        let r = build(&coin(2f64.ln())).unwrap();
        let q = &r.inputs.quantities;
        assert!((q.c_w - 1.5625).abs() < 1e-12);
        assert!((q.w_2 - 1.054_092_553_389_459_6).abs() < 1e-9);
        assert!((q.v.unwrap() - 10.0 / 3.0).abs() < 1e-12);
        let b = &r.boxes[0];
        assert!((b.clt_sigma2 - 16.0 / 81.0).abs() < 1e-12);
        assert!((b.lemma_rhs[0].rhs - 0.195_14).abs() < 1e-4);
        assert_eq!(r.curves.len(), 2);
        assert!(r.curves[1].unbounded < r.curves[0].unbounded);
    }

    #[test]
    fn zero_tilt_constants_are_one() {
        let r = build(&coin(0.0)).unwrap();
        let q = &r.inputs.quantities;
        assert_eq!((q.c_w, q.w_2, q.v.unwrap()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn regime_violation_is_reported() {
        let mut cfg = coin(1.0);
        cfg.bounds.p = 2.0;
        cfg.bounds.q = 4.0;
        assert!(matches!(build(&cfg), Err(Error::Regime(_))));
    }
}
