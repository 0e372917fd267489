//! Feed-forward ε-prediction network with Fourier time features and a
//! hand-written reverse pass.
//!
//! Input is `[x ‖ sin(ω_k τ) ‖ cos(ω_k τ)]` with `τ = t / T`; hidden layers
//! use a smooth activation; the output layer is linear with width `d`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s + z * s * (1.0 - s)
            }
            Activation::Tanh => {
                let th = z.tanh();
                1.0 - th * th
            }
        }
    }
}

/// Map from `t / horizon ∈ [0, 1]` to the embedded time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeWarp {
    #[default]
    Linear,
    /// Spreads small times apart, where the score changes fastest.
    Sqrt,
}

impl TimeWarp {
    fn apply(self, tau: f64) -> f64 {
        match self {
            TimeWarp::Linear => tau,
            TimeWarp::Sqrt => tau.max(0.0).sqrt(),
        }
    }
}

/// Sin/cos features of the warped `t / horizon` at geometrically spaced
/// frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub frequencies: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub warp: TimeWarp,
}

impl TimeEmbedding {
    /// `count` frequencies from 1 to `max_frequency`, geometric spacing.
    pub fn geometric(count: usize, max_frequency: f64, horizon: f64, warp: TimeWarp) -> Self {
        let frequencies = (0..count)
            .map(|k| {
                if count == 1 {
                    1.0
                } else {
                    max_frequency.powf(k as f64 / (count - 1) as f64)
                }
            })
            .collect();
        Self {
            frequencies,
            horizon,
            warp,
        }
    }

    pub fn width(&self) -> usize {
        2 * self.frequencies.len()
    }

    fn embed(&self, t: ArrayView1<'_, f64>) -> Array2<f64> {
        let k = self.frequencies.len();
        let mut out = Array2::zeros((t.len(), 2 * k));
        for (mut row, &ti) in out.rows_mut().into_iter().zip(t.iter()) {
            let tau = self.warp.apply(ti / self.horizon);
            for (j, w) in self.frequencies.iter().enumerate() {
                row[j] = (w * tau).sin();
                row[k + j] = (w * tau).cos();
            }
        }
        out
    }
}

/// Affine layer `z = W a + b`, `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub time_frequencies: usize,
    pub max_frequency: f64,
    pub activation: Activation,
    pub time_warp: TimeWarp,
    /// Start with a zero output layer, so the untrained model predicts 0.
    pub zero_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            time_frequencies: 8,
            max_frequency: 64.0,
            activation: Activation::Silu,
            time_warp: TimeWarp::Sqrt,
            zero_output: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserModel {
    pub data_dim: usize,
    pub embedding: TimeEmbedding,
    pub activation: Activation,
    pub layers: Vec<Dense>,
    /// When set, the network models the diffusion of the standardized data
    /// `z = (x − shift) / scale` rather than of `x` itself.
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
}

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Sample mean and standard deviation per coordinate; a coordinate with
    /// no spread keeps scale 1.
    pub fn fit(data: &Dataset) -> Self {
        let shift = data.mean();
        let n = data.n() as f64;
        let scale = data
            .points()
            .columns()
            .into_iter()
            .zip(&shift)
            .map(|(col, m)| {
                let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn forward(&self, data: &Dataset) -> Result<Dataset> {
        let mut pts = data.points().to_owned();
        for (mut col, (m, s)) in pts.columns_mut().into_iter().zip(self.shift.iter().zip(&self.scale)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        Dataset::new(pts)
    }

    pub fn inverse(&self, data: &Dataset) -> Result<Dataset> {
        let mut pts = data.points().to_owned();
        for (mut col, (m, s)) in pts.columns_mut().into_iter().zip(self.shift.iter().zip(&self.scale)) {
            col.mapv_inplace(|v| m + s * v);
        }
        Dataset::new(pts)
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.shift.len() != d || self.scale.len() != d {
            return Err(Error::invalid("standardizer length differs from the data dimension"));
        }
        if self.shift.iter().any(|v| !v.is_finite()) || self.scale.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("standardizer needs finite shifts and positive scales"));
        }
        Ok(())
    }
}

/// Gradient with the same layout as [`DenoiserModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::len).sum());
    for l in layers {
        out.extend(l.weight.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// A mini-batch of `(x_t, t, ε)` triples.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub x: Array2<f64>,
    pub t: Array1<f64>,
    pub eps: Array2<f64>,
}

struct Tape {
    /// Inputs to each layer (`activations[0]` is the network input).
    activations: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl DenoiserModel {
    /// Random initialisation: `N(0, 1/fan_in)` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        horizon: f64,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if data_dim == 0 || config.hidden.iter().any(|w| *w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let embedding =
            TimeEmbedding::geometric(
            config.time_frequencies,
            config.max_frequency,
            horizon,
            config.time_warp,
        );
        let mut widths = vec![data_dim + embedding.width()];
        widths.extend(&config.hidden);
        widths.push(data_dim);
        let n_layers = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut layer = Dense::zeros(w[0], w[1]);
                if !(config.zero_output && i == n_layers - 1) {
                    let scale = (1.0 / w[0] as f64).sqrt();
                    layer
                        .weight
                        .mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
                }
                layer
            })
            .collect();
        Ok(Self {
            data_dim,
            embedding,
            activation: config.activation,
            layers,
            standardizer: None,
        })
    }

    pub fn input_width(&self) -> usize {
        self.data_dim + self.embedding.width()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_width();
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.ncols() != width || l.bias.len() != l.weight.nrows() {
                return Err(Error::invalid(format!("layer {i} has inconsistent shape")));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::numerics(format!("parameters of layer {i}")));
            }
            width = l.weight.nrows();
        }
        if width != self.data_dim {
            return Err(Error::invalid("output width must equal the data dimension"));
        }
        if let Some(st) = &self.standardizer {
            st.validate(self.data_dim)?;
        }
        Ok(())
    }

    fn run(&self, x: ArrayView2<'_, f64>, t: ArrayView1<'_, f64>, keep: bool) -> Result<Tape> {
        if x.ncols() != self.data_dim || x.nrows() != t.len() {
            return Err(Error::invalid(format!(
                "expected {}-dim inputs with one time per row",
                self.data_dim
            )));
        }
        let input = concatenate(Axis(1), &[x, self.embedding.embed(t).view()])
            .expect("matching row counts");
        let mut activations = Vec::new();
        let mut pre = Vec::new();
        let mut a = input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerics(format!("layer {i}")));
            }
            if i == last {
                if keep {
                    activations.push(a);
                }
                return Ok(Tape {
                    activations,
                    pre,
                    output: z,
                });
            }
            let next = z.mapv(|v| self.activation.apply(v));
            if keep {
                activations.push(a);
                pre.push(z);
            }
            a = next;
        }
        unreachable!("model has at least one layer")
    }

    /// `ε̂(x_i, t_i)` for every row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>, t: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.run(x, t, false)?.output)
    }

    /// Mean over the batch of `‖ε − ε̂(x_t, t)‖²` and its exact gradient.
    pub fn loss_and_grad(&self, batch: &TrainBatch) -> Result<(f64, Gradient)> {
        let b = batch.x.nrows();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if batch.eps.dim() != batch.x.dim() {
            return Err(Error::invalid("eps and x shapes differ"));
        }
        let tape = self.run(batch.x.view(), batch.t.view(), true)?;
        let resid = &tape.output - &batch.eps;
        let loss = resid.iter().map(|v| v * v).sum::<f64>() / b as f64;
        let mut delta = resid * (2.0 / b as f64);
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a_in = &tape.activations[i];
            let weight = delta.t().dot(a_in);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weight, bias });
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weight);
                Zip::from(&mut back)
                    .and(&tape.pre[i - 1])
                    .for_each(|g, &z| *g *= self.activation.derivative(z));
                delta = back;
            }
        }
        grads.reverse();
        Ok((loss, Gradient { layers: grads }))
    }

    /// Applies `params -= step` for a flat update vector.
    pub(crate) fn apply_update(&mut self, update: &[f64]) {
        let mut offset = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w -= update[offset];
                offset += 1;
            }
        }
    }
}

/// `ε̂(x, t)` for a single point.
pub fn denoiser_forward(model: &DenoiserModel, x: ArrayView1<'_, f64>, t: f64) -> Result<Array1<f64>> {
    let xs = x.insert_axis(Axis(0));
    let ts = Array1::from_elem(1, t);
    Ok(model.forward_batch(xs, ts.view())?.slice(s![0, ..]).to_owned())
}

/// Exact gradient of the batch-mean ε-MSE.
pub fn denoiser_grad(model: &DenoiserModel, batch: &TrainBatch) -> Result<Gradient> {
    model.loss_and_grad(batch).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn small(hidden: Vec<usize>, d: usize, act: Activation, seed: u64) -> DenoiserModel {
        let cfg = ModelConfig {
            hidden,
            time_frequencies: 2,
            max_frequency: 4.0,
            activation: act,
            time_warp: TimeWarp::Sqrt,
            zero_output: false,
        };
        DenoiserModel::new(d, 1.0, &cfg, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let m = DenoiserModel::new(2, 5.0, &ModelConfig::default(), &mut seeded(0)).unwrap();
        let out = denoiser_forward(&m, array![1.0, -3.0].view(), 2.5).unwrap();
        assert_eq!(out, array![0.0, 0.0]);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let m = small(vec![5, 4], 2, Activation::Silu, 1);
        let a = denoiser_forward(&m, array![0.3, 0.1].view(), 0.4).unwrap();
        let b = denoiser_forward(&m, array![0.3, 0.1].view(), 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_set_network_matches_hand_computation() {
        // one hidden unit, tanh, one time frequency
        let mut m = DenoiserModel {
            data_dim: 1,
            embedding: TimeEmbedding {
                frequencies: vec![1.0],
                horizon: 2.0,
                warp: TimeWarp::Linear,
            },
            activation: Activation::Tanh,
            layers: vec![
                Dense {
                    weight: array![[0.5, 1.0, -1.0]],
                    bias: array![0.1],
                },
                Dense {
                    weight: array![[2.0]],
                    bias: array![-0.3],
                },
            ],
            standardizer: None,
        };
        m.validate().unwrap();
        let (x, t) = (0.8f64, 1.0f64);
        let tau = t / 2.0;
        let h = (0.5 * x + tau.sin() - tau.cos() + 0.1).tanh();
        let want = 2.0 * h - 0.3;
        let got = denoiser_forward(&m, array![x].view(), t).unwrap()[0];
        assert!((got - want).abs() < 1e-15);
        m.layers[1].weight[[0, 0]] = f64::NAN;
        assert!(matches!(
            denoiser_forward(&m, array![x].view(), t),
            Err(Error::Numerics { .. })
        ));
    }

    #[test]
    fn perfect_prediction_gives_zero_output_gradient() {
        let m = small(vec![3], 1, Activation::Silu, 2);
        let x = array![[0.2], [-0.5]];
        let t = array![0.3, 0.9];
        let eps = m.forward_batch(x.view(), t.view()).unwrap();
        let (loss, g) = m.loss_and_grad(&TrainBatch { x, t, eps }).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_of_one_is_single_sample_gradient() {
        let m = small(vec![4, 3], 2, Activation::Silu, 3);
        let b1 = TrainBatch {
            x: array![[0.1, 0.2]],
            t: array![0.5],
            eps: array![[1.0, -1.0]],
        };
        let b2 = TrainBatch {
            x: array![[0.1, 0.2], [0.1, 0.2]],
            t: array![0.5, 0.5],
            eps: array![[1.0, -1.0], [1.0, -1.0]],
        };
        let g1 = denoiser_grad(&m, &b1).unwrap().flatten();
        let g2 = denoiser_grad(&m, &b2).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn parameters_round_trip() {
        let mut m = small(vec![3], 1, Activation::Tanh, 4);
        let p = m.parameters();
        let doubled: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        m.set_parameters(&doubled).unwrap();
        assert_eq!(m.parameters(), doubled);
        assert!(m.set_parameters(&p[1..]).is_err());
    }

    #[test]
    fn standardizer_round_trips_and_whitens() {
        let data = Dataset::new(array![[1.0, 5.0], [3.0, 5.0], [8.0, 5.0]]).unwrap();
        let st = Standardizer::fit(&data);
        assert_eq!(st.scale[1], 1.0);
        let z = st.forward(&data).unwrap();
        let col = z.points().column(0).to_owned();
        assert!(col.mean().unwrap().abs() < 1e-12);
        assert!((col.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-12);
        let back = st.inverse(&z).unwrap();
        for (a, b) in back.points().iter().zip(data.points()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut m = small(vec![4], 2, Activation::Silu, 3);
        m.standardizer = Some(Standardizer { shift: vec![0.0], scale: vec![1.0] });
        assert!(m.validate().is_err());
        m.standardizer = Some(Standardizer { shift: vec![0.0; 2], scale: vec![1.0, 0.0] });
        assert!(m.validate().is_err());
    }
}
