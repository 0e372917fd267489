use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use tiltdiff::diffusion::{Activation, DenoiserModel, ModelConfig, TimeWarp, TrainBatch};
use tiltdiff::rng::seeded;

fn net(seed: u64, act: Activation) -> (DenoiserModel, TrainBatch) {
    let mut rng = seeded(seed);
    let d = rng.random_range(1..4);
    let depth = rng.random_range(1..3);
    let cfg = ModelConfig {
        hidden: (0..depth).map(|_| rng.random_range(2..9)).collect(),
        time_frequencies: 3,
        max_frequency: 8.0,
        activation: act,
        time_warp: if seed % 2 == 0 { TimeWarp::Sqrt } else { TimeWarp::Linear },
        zero_output: false,
    };
    let model = DenoiserModel::new(d, 2.0, &cfg, &mut rng).unwrap();
    let b = 5;
    let batch = TrainBatch {
        x: Array2::from_shape_simple_fn((b, d), || rng.sample(StandardNormal)),
        t: Array1::from_shape_simple_fn(b, || rng.random_range(0.01..2.0)),
        eps: Array2::from_shape_simple_fn((b, d), || rng.sample(StandardNormal)),
    };
    (model, batch)
}

/// Largest per-coordinate relative error of the analytic gradient against
/// central differences with step `h`. Coordinates whose gradient is below
/// `floor` in magnitude are compared on the absolute scale `floor`.
fn max_relative_error(model: &DenoiserModel, batch: &TrainBatch, h: f64, floor: f64) -> f64 {
    let analytic = model.loss_and_grad(batch).unwrap().1.flatten();
    let theta = model.parameters();
    let mut probe = model.clone();
    let mut loss_at = |i: usize, v: f64| {
        let mut p = theta.clone();
        p[i] = v;
        probe.set_parameters(&p).unwrap();
        probe.loss_and_grad(batch).unwrap().0
    };
    (0..theta.len())
        .map(|i| {
            let numeric = (loss_at(i, theta[i] + h) - loss_at(i, theta[i] - h)) / (2.0 * h);
            (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

#[test]
fn backprop_matches_finite_differences_silu() {
    for seed in 0..10 {
        let (m, b) = net(seed, Activation::Silu);
        let e = max_relative_error(&m, &b, 1e-5, 1e-4);
        assert!(e <= 1e-5, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn backprop_matches_finite_differences_tanh() {
    for seed in 100..110 {
        let (m, b) = net(seed, Activation::Tanh);
        let e = max_relative_error(&m, &b, 1e-5, 1e-4);
        assert!(e <= 1e-5, "seed {seed}: relative error {e:e}");
    }
}
