//! Python module `tiltdiff_py`. Point sets cross the boundary as lists of
//! rows (`list[list[float]]`).

use ndarray::ArrayView1;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tiltdiff::bounds::{tilt_quantities as quantities, FiniteMeasure, Source};
use tiltdiff::diffusion::{self, DenoiserModel, LossTrace, ModelConfig, NoiseSchedule, TrainConfig};
use tiltdiff::rng::seeded;
use tiltdiff::synth::{self, gen_beta_mix_spec, ground_truth_tilted, Normalization, OracleStrategy};
use tiltdiff::transport::{self, DiscreteMeasure1D};
use tiltdiff::{tilt, Dataset, Error, TiltSpec};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn dataset(rows: &[Vec<f64>]) -> PyResult<Dataset> {
    Dataset::from_rows(rows).map_err(to_py)
}

fn exponential(theta: Vec<f64>, g_max: Option<f64>) -> PyResult<TiltSpec> {
    let mut t = TiltSpec::exponential(theta);
    if let Some(g) = g_max {
        t = t.with_g_max(g);
    }
    t.validate().map_err(to_py)?;
    Ok(t)
}

/// Self-normalised weights of the exponential tilt `exp(θᵀx)` on `points`.
#[pyfunction]
fn plugin_weights(points: Vec<Vec<f64>>, theta: Vec<f64>) -> PyResult<Vec<f64>> {
    let m = tilt::plugin_measure(&dataset(&points)?, &exponential(theta, None)?).map_err(to_py)?;
    Ok(m.weights().to_vec())
}

/// Effective sample size `1 / Σ w_i²` of the plug-in weights.
#[pyfunction]
fn effective_sample_size(points: Vec<Vec<f64>>, theta: Vec<f64>) -> PyResult<f64> {
    let m = tilt::plugin_measure(&dataset(&points)?, &exponential(theta, None)?).map_err(to_py)?;
    Ok(tilt::effective_sample_size(&m))
}

/// `m` i.i.d. draws from the tilted plug-in measure.
#[pyfunction]
#[pyo3(signature = (points, theta, m, seed=0))]
fn resample(points: Vec<Vec<f64>>, theta: Vec<f64>, m: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let measure = tilt::plugin_measure(&dataset(&points)?, &exponential(theta, None)?).map_err(to_py)?;
    let out = tilt::resample(&measure, m, &mut seeded(seed)).map_err(to_py)?;
    Ok(out.to_rows())
}

/// Exact `W_p` between two uniform empirical measures on the line.
#[pyfunction]
#[pyo3(signature = (x, y, p=2.0))]
fn wp_1d(x: Vec<f64>, y: Vec<f64>, p: f64) -> PyResult<f64> {
    let a = DiscreteMeasure1D::uniform(&x).map_err(to_py)?;
    let b = DiscreteMeasure1D::uniform(&y).map_err(to_py)?;
    Ok(transport::wp_1d(&a, &b, p))
}

/// Sliced `W_p` between two point sets.
#[pyfunction]
#[pyo3(signature = (x, y, p=2.0, n_proj=128, seed=0))]
fn sliced_wp(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, p: f64, n_proj: usize, seed: u64) -> PyResult<f64> {
    transport::sliced_wp_datasets(&dataset(&x)?, &dataset(&y)?, p, n_proj, &mut seeded(seed)).map_err(to_py)
}

/// Tilt constants of a finite measure, as a dict.
#[pyfunction]
#[pyo3(signature = (atoms, masses, theta, g_max=None))]
fn tilt_quantities<'py>(
    py: Python<'py>,
    atoms: Vec<Vec<f64>>,
    masses: Vec<f64>,
    theta: Vec<f64>,
    g_max: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let measure = FiniteMeasure::new(dataset(&atoms)?, masses).map_err(to_py)?;
    let q = quantities(Source::Exact(&measure), &exponential(theta, g_max)?).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("m_theta", q.m_theta)?;
    out.set_item("m_2theta", q.m_2theta)?;
    out.set_item("m_minus2theta", q.m_minus2theta)?;
    out.set_item("c_w", q.c_w)?;
    out.set_item("w_2", q.w_2)?;
    out.set_item("v", q.v)?;
    Ok(out)
}

fn beta_spec(d: usize, spec_seed: u64) -> PyResult<synth::BetaMixSpec> {
    gen_beta_mix_spec(d, &mut seeded(spec_seed), Normalization::RowStochastic).map_err(to_py)
}

/// `n` draws of the correlated Beta mixture generated from `spec_seed`.
#[pyfunction]
#[pyo3(signature = (d, n, seed=0, spec_seed=0))]
fn sample_beta_mix(d: usize, n: usize, seed: u64, spec_seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let spec = beta_spec(d, spec_seed)?;
    let ds = synth::sample_beta_mix(&spec, n, &mut seeded(seed)).map_err(to_py)?;
    Ok(ds.to_rows())
}

/// Exact draws from the exponentially tilted Beta mixture, with the
/// sampler's acceptance rate.
#[pyfunction]
#[pyo3(signature = (d, theta, n, seed=0, spec_seed=0))]
fn ground_truth(d: usize, theta: Vec<f64>, n: usize, seed: u64, spec_seed: u64) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let spec = beta_spec(d, spec_seed)?;
    let gt = ground_truth_tilted(&spec, &exponential(theta, None)?, n, &mut seeded(seed), OracleStrategy::Factorized)
        .map_err(to_py)?;
    Ok((gt.samples.to_rows(), gt.acceptance_rate))
}

/// Trained ε-prediction denoiser together with its noise schedule.
#[pyclass(module = "tiltdiff_py")]
struct Denoiser {
    model: DenoiserModel,
    schedule: NoiseSchedule,
    trace: LossTrace,
}

#[pymethods]
impl Denoiser {
    /// Resamples `points` by the tilt `exp(θᵀx)` and fits a denoiser.
    #[staticmethod]
    #[pyo3(signature = (points, theta, steps=2000, batch_size=256, hidden=vec![64, 64], learning_rate=2e-3, horizon=5.0, reverse_steps=500, seed=0, ema_decay=0.0, final_lr_fraction=0.05, standardize=true))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        points: Vec<Vec<f64>>,
        theta: Vec<f64>,
        steps: usize,
        batch_size: usize,
        hidden: Vec<usize>,
        learning_rate: f64,
        horizon: f64,
        reverse_steps: usize,
        seed: u64,
        ema_decay: f64,
        final_lr_fraction: f64,
        standardize: bool,
    ) -> PyResult<Self> {
        let schedule = NoiseSchedule::new(1.0, 1.0, horizon, reverse_steps).map_err(to_py)?;
        let cfg = TrainConfig {
            steps,
            batch_size,
            learning_rate,
            seed,
            ema_decay,
            final_lr_fraction,
            standardize,
            model: ModelConfig {
                hidden,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let (model, trace) =
            diffusion::train(&dataset(&points)?, &exponential(theta, None)?, &schedule, &cfg).map_err(to_py)?;
        Ok(Self { model, schedule, trace })
    }

    /// Reverse-SDE samples.
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let ds = diffusion::reverse_sample(&self.model, &self.schedule, n, &mut seeded(seed)).map_err(to_py)?;
        Ok(ds.to_rows())
    }

    /// Predicted noise `ε̂(x, t)` for each row of `x`, given in the model's
    /// standardized coordinates when it was trained with `standardize`.
    fn predict(&self, x: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let ds = dataset(&x)?;
        let ts = vec![t; ds.n()];
        let out = self
            .model
            .forward_batch(ds.points(), ArrayView1::from(&ts[..]))
            .map_err(to_py)?;
        Ok(out.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// `(step, loss)` pairs recorded during training.
    fn loss_trace(&self) -> Vec<(usize, f64)> {
        self.trace.entries.clone()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.num_parameters()
    }
}

/// Runs the score-gap inequality battery; one dict per (instance, variant).
#[pyfunction]
#[pyo3(signature = (instances=60, n_mc=2000, seed=0))]
fn scoregap_battery<'py>(py: Python<'py>, instances: usize, n_mc: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = tiltdiff::scoregap::BatteryConfig {
        instances,
        n_mc,
        seed,
        ..Default::default()
    };
    let rows = tiltdiff::scoregap::run_battery(&cfg).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("instance", r.instance)?;
            d.set_item("variant", r.variant.name())?;
            d.set_item("delta_hat", r.delta_hat)?;
            d.set_item("rhs", r.rhs)?;
            d.set_item("stderr", r.stderr)?;
            d.set_item("holds", r.holds)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn tiltdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(plugin_weights, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(wp_1d, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_wp, m)?)?;
    m.add_function(wrap_pyfunction!(tilt_quantities, m)?)?;
    m.add_function(wrap_pyfunction!(sample_beta_mix, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(scoregap_battery, m)?)?;
    m.add_class::<Denoiser>()?;
    Ok(())
}
