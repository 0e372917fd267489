//! Tilt families, tilt weights and the plug-in (self-normalised) estimator of
//! the tilted law, plus an exact rejection sampler used as ground truth.
//!
//! A tilt reweights a base law `μ` by `w(x) = φ(θᵀ g(x))`, where `φ` is one
//! of:
//!
//! * `Exponential`: `exp(s)`;
//! * `Escort(α, a, b)`: `(a + b s)^{1/(α-1)}`;
//! * `QExponential(q, c)`: `[1 + (1-q) c s]^{1/(1-q)}`.
//!
//! Weights are always normalised in log space after subtracting the maximum
//! log-weight, so large `‖θ‖` never overflows.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// The scalar link `φ` applied to `θᵀ g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TiltFamily {
    Exponential,
    Escort { alpha: f64, a: f64, b: f64 },
    QExponential { q: f64, c: f64 },
}

impl TiltFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            TiltFamily::Exponential => Ok(()),
            TiltFamily::Escort { alpha, a, b } => {
                if !(alpha > 0.0) || alpha == 1.0 || !a.is_finite() || !b.is_finite() {
                    return Err(Error::invalid(format!(
                        "escort tilt needs alpha > 0, alpha != 1 (got {alpha})"
                    )));
                }
                Ok(())
            }
            TiltFamily::QExponential { q, c } => {
                if !(q > 0.0) || q == 1.0 || !c.is_finite() {
                    return Err(Error::invalid(format!(
                        "q-exponential tilt needs q > 0, q != 1 (got {q})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// For the power families: the base `a + b s` (resp. `1 + (1-q) c s`) and
    /// the exponent applied to it.
    fn base_and_exponent(&self, s: f64) -> Option<(f64, f64)> {
        match *self {
            TiltFamily::Exponential => None,
            TiltFamily::Escort { alpha, a, b } => Some((a + b * s, 1.0 / (alpha - 1.0))),
            TiltFamily::QExponential { q, c } => Some((1.0 + (1.0 - q) * c * s, 1.0 / (1.0 - q))),
        }
    }
}

pub type CustomEval = dyn Fn(ArrayView1<'_, f64>) -> Vec<f64> + Send + Sync;

/// Host-supplied tilt statistic with a declared output dimension.
#[derive(Clone)]
pub struct CustomTilt {
    pub label: String,
    pub out_dim: usize,
    eval: Arc<CustomEval>,
}

impl CustomTilt {
    pub fn new(
        label: impl Into<String>,
        out_dim: usize,
        eval: impl Fn(ArrayView1<'_, f64>) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            out_dim,
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for CustomTilt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomTilt")
            .field("label", &self.label)
            .field("out_dim", &self.out_dim)
            .finish_non_exhaustive()
    }
}

/// The statistic `g` whose projection on `θ` drives the tilt.
#[derive(Debug, Clone)]
pub enum TiltFunction {
    Identity,
    /// `g(x) = B x` with `B` of shape `d' × d`.
    LinearMap(Array2<f64>),
    /// `g(x) = mean_i x_i`, a scalar.
    CoordinateMean,
    Custom(CustomTilt),
}

impl TiltFunction {
    /// Output dimension for inputs of dimension `d`.
    pub fn out_dim(&self, d: usize) -> usize {
        match self {
            TiltFunction::Identity => d,
            TiltFunction::LinearMap(b) => b.nrows(),
            TiltFunction::CoordinateMean => 1,
            TiltFunction::Custom(c) => c.out_dim,
        }
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        match self {
            TiltFunction::Identity => Ok(x.to_vec()),
            TiltFunction::LinearMap(b) => {
                if b.ncols() != x.len() {
                    return Err(Error::invalid(format!(
                        "linear map expects input dim {}, got {}",
                        b.ncols(),
                        x.len()
                    )));
                }
                Ok(b.dot(&x).to_vec())
            }
            TiltFunction::CoordinateMean => Ok(vec![x.mean().unwrap_or(0.0)]),
            TiltFunction::Custom(c) => {
                let out = (c.eval)(x);
                if out.len() != c.out_dim {
                    return Err(Error::invalid(format!(
                        "custom tilt {:?} returned {} values, declared {}",
                        c.label,
                        out.len(),
                        c.out_dim
                    )));
                }
                Ok(out)
            }
        }
    }

    /// Matrix `G` with `g(x) = G x` when `g` is linear in `x`.
    pub fn as_matrix(&self, d: usize) -> Option<Array2<f64>> {
        match self {
            TiltFunction::Identity => Some(Array2::eye(d)),
            TiltFunction::LinearMap(b) => Some(b.clone()),
            TiltFunction::CoordinateMean => Some(Array2::from_elem((1, d), 1.0 / d as f64)),
            TiltFunction::Custom(_) => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
enum TiltFunctionRepr {
    Identity,
    LinearMap(Vec<Vec<f64>>),
    CoordinateMean,
    Custom { label: String, out_dim: usize },
}

impl Serialize for TiltFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            TiltFunction::Identity => TiltFunctionRepr::Identity,
            TiltFunction::LinearMap(b) => {
                TiltFunctionRepr::LinearMap(b.rows().into_iter().map(|r| r.to_vec()).collect())
            }
            TiltFunction::CoordinateMean => TiltFunctionRepr::CoordinateMean,
            TiltFunction::Custom(c) => TiltFunctionRepr::Custom {
                label: c.label.clone(),
                out_dim: c.out_dim,
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TiltFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match TiltFunctionRepr::deserialize(d)? {
            TiltFunctionRepr::Identity => Ok(TiltFunction::Identity),
            TiltFunctionRepr::CoordinateMean => Ok(TiltFunction::CoordinateMean),
            TiltFunctionRepr::LinearMap(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                    return Err(D::Error::custom("linear_map must be a non-empty rectangular matrix"));
                }
                let flat = rows.into_iter().flatten().collect();
                Array2::from_shape_vec((r, c), flat)
                    .map(TiltFunction::LinearMap)
                    .map_err(D::Error::custom)
            }
            TiltFunctionRepr::Custom { label, .. } => Err(D::Error::custom(format!(
                "custom tilt function {label:?} has no serialized evaluator; construct it in code"
            ))),
        }
    }
}

/// A complete tilt: family, parameter `θ`, statistic `g` and an optional
/// bound `g_max ≥ ‖g(x)‖`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TiltSpec {
    pub family: TiltFamily,
    pub theta: Vec<f64>,
    pub g: TiltFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_max: Option<f64>,
}

impl TiltSpec {
    pub fn new(
        family: TiltFamily,
        theta: Vec<f64>,
        g: TiltFunction,
        g_max: Option<f64>,
    ) -> Result<Self> {
        let spec = Self {
            family,
            theta,
            g,
            g_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Exponential tilt with `g(x) = x`.
    pub fn exponential(theta: Vec<f64>) -> Self {
        Self {
            family: TiltFamily::Exponential,
            theta,
            g: TiltFunction::Identity,
            g_max: None,
        }
    }

    pub fn with_g_max(mut self, g_max: f64) -> Self {
        self.g_max = Some(g_max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.theta.is_empty() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("theta must be a non-empty finite vector"));
        }
        if let Some(gm) = self.g_max {
            if !(gm >= 0.0) || !gm.is_finite() {
                return Err(Error::invalid(format!("g_max must be finite and >= 0, got {gm}")));
            }
        }
        let fixed_dim = match &self.g {
            TiltFunction::Identity => None,
            other => Some(other.out_dim(0)),
        };
        if let Some(k) = fixed_dim {
            if k != self.theta.len() {
                return Err(Error::invalid(format!(
                    "tilt function output dim {k} != theta dim {}",
                    self.theta.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.theta.iter().all(|&t| t == 0.0)
    }

    pub fn theta_norm(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// Same tilt with `θ` replaced by `k θ`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.theta.iter_mut().for_each(|t| *t *= k);
        out
    }

    /// `θᵀ g(x)`, enforcing the declared `g_max`.
    pub fn statistic(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        self.statistic_at(x, None)
    }

    fn statistic_at(&self, x: ArrayView1<'_, f64>, atom: Option<usize>) -> Result<f64> {
        let s = match &self.g {
            TiltFunction::Identity if self.g_max.is_none() => {
                if x.len() != self.theta.len() {
                    return Err(dim_mismatch(x.len(), self.theta.len()));
                }
                x.iter().zip(&self.theta).map(|(a, b)| a * b).sum()
            }
            g => {
                let gx = g.eval(x)?;
                if gx.len() != self.theta.len() {
                    return Err(dim_mismatch(gx.len(), self.theta.len()));
                }
                if let Some(g_max) = self.g_max {
                    let norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > g_max * (1.0 + 1e-12) {
                        return Err(Error::TiltBoundViolation { atom, norm, g_max });
                    }
                }
                gx.iter().zip(&self.theta).map(|(a, b)| a * b).sum()
            }
        };
        Ok(s)
    }

    fn weight_from_statistic(&self, s: f64, atom: Option<usize>) -> Result<f64> {
        match self.family.base_and_exponent(s) {
            None => {
                let w = s.exp();
                if !w.is_finite() {
                    return Err(Error::Overflow(format!("exp({s}) is not representable")));
                }
                Ok(w)
            }
            Some((base, e)) => {
                if base < 0.0 {
                    return Err(Error::Domain {
                        atom,
                        msg: format!("tilt base {base} is negative"),
                    });
                }
                let w = base.powf(e);
                if !w.is_finite() {
                    return Err(Error::Overflow(format!("{base}^{e} is not representable")));
                }
                Ok(w)
            }
        }
    }

    /// Log-weight; `-inf` for an exactly zero power-family weight.
    fn log_weight_from_statistic(&self, s: f64, atom: Option<usize>) -> Result<f64> {
        match self.family.base_and_exponent(s) {
            None => Ok(s),
            Some((base, e)) => {
                if base < 0.0 {
                    return Err(Error::Domain {
                        atom,
                        msg: format!("tilt base {base} is negative"),
                    });
                }
                if base == 0.0 {
                    if e > 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    return Err(Error::Overflow(format!("0^{e} is unbounded")));
                }
                Ok(e * base.ln())
            }
        }
    }
}

fn dim_mismatch(got: usize, want: usize) -> Error {
    Error::invalid(format!("g(x) has dim {got}, theta has dim {want}"))
}

/// `w(x) = φ(θᵀ g(x))` for a single point.
pub fn tilt_weight(x: ArrayView1<'_, f64>, tilt: &TiltSpec) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("point has non-finite coordinates"));
    }
    let s = tilt.statistic(x)?;
    tilt.weight_from_statistic(s, None)
}

/// `log w(x_i)` for every row of the dataset.
///
/// Fails with [`Error::Domain`] when a power-family weight is not strictly
/// positive.
pub fn log_weights(dataset: &Dataset, tilt: &TiltSpec) -> Result<Vec<f64>> {
    let lw = log_weights_allow_zero(dataset, tilt)?;
    if let Some(i) = lw.iter().position(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Domain {
            atom: Some(i),
            msg: "weight is zero, log-weight undefined".into(),
        });
    }
    Ok(lw)
}

fn log_weights_allow_zero(dataset: &Dataset, tilt: &TiltSpec) -> Result<Vec<f64>> {
    tilt.validate()?;
    dataset
        .points()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let s = tilt.statistic_at(x, Some(i))?;
            tilt.log_weight_from_statistic(s, Some(i))
        })
        .collect()
}

/// Atoms of a dataset with nonnegative weights summing to one.
#[derive(Debug, Clone)]
pub struct WeightedMeasure {
    atoms: Dataset,
    weights: Vec<f64>,
}

impl WeightedMeasure {
    pub fn new(atoms: Dataset, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != atoms.n() {
            return Err(Error::invalid(format!(
                "{} weights for {} atoms",
                weights.len(),
                atoms.n()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { atoms, weights })
    }

    /// The empirical measure: weight `1/n` on every row.
    pub fn uniform(atoms: Dataset) -> Self {
        let n = atoms.n();
        Self {
            weights: vec![1.0 / n as f64; n],
            atoms,
        }
    }

    /// Normalises `exp(log_w)` after max-subtraction.
    pub fn from_log_weights(atoms: Dataset, log_w: &[f64]) -> Result<Self> {
        if log_w.len() != atoms.n() {
            return Err(Error::invalid("log-weight length mismatch"));
        }
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::numerics("log-weights"));
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateMeasure("all weights are zero".into()));
        }
        let mut weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { atoms, weights })
    }

    pub fn atoms(&self) -> &Dataset {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn d(&self) -> usize {
        self.atoms.d()
    }

    /// Total weight of atoms satisfying `pred`.
    pub fn mass_where(&self, mut pred: impl FnMut(ArrayView1<'_, f64>) -> bool) -> f64 {
        self.atoms
            .points()
            .rows()
            .into_iter()
            .zip(&self.weights)
            .filter(|(x, _)| pred(*x))
            .map(|(_, w)| *w)
            .sum()
    }
}

/// The plug-in tilted measure `Σ_i w_i δ_{x_i} / Σ_j w_j`.
pub fn plugin_measure(dataset: &Dataset, tilt: &TiltSpec) -> Result<WeightedMeasure> {
    let lw = log_weights_allow_zero(dataset, tilt)?;
    WeightedMeasure::from_log_weights(dataset.clone(), &lw)
}

/// Indices of `m` draws with replacement, atom `i` chosen with probability
/// `weights[i]`, by binary search on the cumulative weights.
pub fn resample_indices<R: Rng + ?Sized>(
    measure: &WeightedMeasure,
    m: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut cum = Vec::with_capacity(measure.weights.len());
    let mut acc = 0.0;
    for w in &measure.weights {
        acc += w;
        cum.push(acc);
    }
    let total = acc;
    // last atom with positive weight; guards against u landing past cum[n-1]
    let last = measure
        .weights
        .iter()
        .rposition(|w| *w > 0.0)
        .expect("measure has positive mass");
    (0..m)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cum.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// `m` i.i.d. draws from the weighted measure.
pub fn resample<R: Rng + ?Sized>(
    measure: &WeightedMeasure,
    m: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::invalid("resample size must be >= 1"));
    }
    let idx = resample_indices(measure, m, rng);
    let pts = measure.atoms.points();
    let d = measure.d();
    let mut out = Array2::zeros((m, d));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&pts.row(i));
    }
    Dataset::new(out)
}

/// `1 / Σ w_i²`, between 1 and `n`.
pub fn effective_sample_size(measure: &WeightedMeasure) -> f64 {
    1.0 / measure.weights.iter().map(|w| w * w).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
pub struct RejectionConfig {
    /// Acceptance rates below this trigger a slow-oracle warning.
    pub min_acceptance: f64,
    /// Number of proposals after which the rate is first checked.
    pub check_after: u64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            min_acceptance: 1e-3,
            check_after: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RejectionOutput {
    pub samples: Dataset,
    pub proposals: u64,
    pub acceptance_rate: f64,
    /// Set when the acceptance rate fell below the configured floor.
    pub slow: bool,
}

/// Exact sampler for the tilted law: proposals from `base` are accepted with
/// probability `w(x) / w_bound`.
///
/// `w_bound` must dominate the weight everywhere the base law puts mass; an
/// observed weight above it is reported as [`Error::BoundViolation`].
pub fn rejection_sample_tilted<R, F>(
    mut base: F,
    tilt: &TiltSpec,
    w_bound: f64,
    n: usize,
    rng: &mut R,
    config: RejectionConfig,
) -> Result<RejectionOutput>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<f64>,
{
    if n == 0 {
        return Err(Error::invalid("requested zero samples"));
    }
    if !(w_bound > 0.0) || !w_bound.is_finite() {
        return Err(Error::invalid(format!("w_bound must be positive and finite, got {w_bound}")));
    }
    let mut flat = Vec::new();
    let mut d = None;
    let mut accepted = 0usize;
    let mut proposals = 0u64;
    let mut slow = false;
    while accepted < n {
        let x = base(rng);
        match d {
            None => d = Some(x.len()),
            Some(d) if d != x.len() => return Err(Error::invalid("base sampler changed dimension")),
            _ => {}
        }
        proposals += 1;
        let w = tilt_weight(ArrayView1::from(&x[..]), tilt)?;
        if w > w_bound * (1.0 + 1e-12) {
            return Err(Error::BoundViolation {
                weight: w,
                bound: w_bound,
            });
        }
        if rng.random::<f64>() * w_bound < w {
            flat.extend_from_slice(&x);
            accepted += 1;
        }
        if !slow && proposals == config.check_after {
            let rate = accepted as f64 / proposals as f64;
            if rate < config.min_acceptance {
                slow = true;
                log::warn!(
                    "rejection oracle is slow: acceptance rate {rate:.3e} after {proposals} proposals"
                );
            }
        }
    }
    let d = d.expect("at least one proposal");
    let samples = Dataset::new(
        Array2::from_shape_vec((n, d), flat).map_err(|e| Error::invalid(e.to_string()))?,
    )?;
    let acceptance_rate = n as f64 / proposals as f64;
    if !slow && acceptance_rate < config.min_acceptance {
        slow = true;
        log::warn!("rejection oracle is slow: acceptance rate {acceptance_rate:.3e}");
    }
    Ok(RejectionOutput {
        samples,
        proposals,
        acceptance_rate,
        slow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn coin() -> Dataset {
        Dataset::from_scalars(&[0.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_tilt_weight_is_one() {
        let t = TiltSpec::exponential(vec![0.0, 0.0]);
        assert_eq!(tilt_weight(array![3.0, -7.0].view(), &t).unwrap(), 1.0);
    }

    #[test]
    fn exponential_weight_matches_direct_evaluation() {
        let t = TiltSpec::exponential(vec![2f64.ln(), 5.0]);
        let w = tilt_weight(array![1.0, 0.0].view(), &t).unwrap();
        assert!((w - 2.0).abs() < 1e-15);
    }

    #[test]
    fn q_exponential_recovers_exponential_near_one() {
        let t = TiltSpec::new(
            TiltFamily::QExponential { q: 1.0 + 1e-6, c: 1.0 },
            vec![1.0],
            TiltFunction::Identity,
            None,
        )
        .unwrap();
        let w = tilt_weight(array![1.0].view(), &t).unwrap();
        assert!((w - std::f64::consts::E).abs() < 1e-4, "{w}");
    }

    #[test]
    fn escort_weight_and_negative_base() {
        let t = TiltSpec::new(
            TiltFamily::Escort { alpha: 3.0, a: 1.0, b: 1.0 },
            vec![1.0],
            TiltFunction::Identity,
            None,
        )
        .unwrap();
        // (1 + 3)^{1/2}
        assert!((tilt_weight(array![3.0].view(), &t).unwrap() - 2.0).abs() < 1e-15);
        let ds = Dataset::from_scalars(&[0.0, -5.0, 1.0]).unwrap();
        match log_weights(&ds, &t) {
            Err(Error::Domain { atom, .. }) => assert_eq!(atom, Some(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_families_are_rejected() {
        let bad = TiltSpec::new(
            TiltFamily::Escort { alpha: 1.0, a: 1.0, b: 1.0 },
            vec![1.0],
            TiltFunction::Identity,
            None,
        );
        assert!(bad.is_err());
        let bad = TiltSpec::new(
            TiltFamily::QExponential { q: -1.0, c: 1.0 },
            vec![1.0],
            TiltFunction::Identity,
            None,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let t = TiltSpec::exponential(vec![1000.0]);
        assert!(matches!(tilt_weight(array![1.0].view(), &t), Err(Error::Overflow(_))));
        // the log path is fine
        let ds = Dataset::from_scalars(&[0.0, 1.0, 0.5]).unwrap();
        let m = plugin_measure(&ds, &t).unwrap();
        assert!(m.weights().iter().all(|w| w.is_finite()));
        assert!((m.weights()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_weights_two_point() {
        let lw = log_weights(&coin(), &TiltSpec::exponential(vec![2f64.ln()])).unwrap();
        assert_eq!(lw, vec![0.0, 2f64.ln()]);
        let lw0 = log_weights(&coin(), &TiltSpec::exponential(vec![0.0])).unwrap();
        assert_eq!(lw0, vec![0.0, 0.0]);
    }

    #[test]
    fn plugin_two_point_weights() {
        let m = plugin_measure(&coin(), &TiltSpec::exponential(vec![2f64.ln()])).unwrap();
        assert!((m.weights()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.weights()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(m.atoms().aliases(&m.atoms().clone()));
    }

    #[test]
    fn plugin_aliases_dataset() {
        let ds = coin();
        let m = plugin_measure(&ds, &TiltSpec::exponential(vec![1.0])).unwrap();
        assert!(m.atoms().aliases(&ds));
    }

    #[test]
    fn constant_dataset_gives_uniform_weights() {
        let ds = Dataset::from_scalars(&[0.7; 5]).unwrap();
        for th in [-3.0, 0.5, 40.0] {
            let m = plugin_measure(&ds, &TiltSpec::exponential(vec![th])).unwrap();
            assert!(m.weights().iter().all(|w| *w == 0.2));
        }
    }

    #[test]
    fn escort_all_zero_is_degenerate() {
        let t = TiltSpec::new(
            TiltFamily::Escort { alpha: 2.0, a: 0.0, b: 1.0 },
            vec![1.0],
            TiltFunction::Identity,
            None,
        )
        .unwrap();
        let ds = Dataset::from_scalars(&[0.0, 0.0]).unwrap();
        assert!(matches!(plugin_measure(&ds, &t), Err(Error::DegenerateMeasure(_))));
        assert!(matches!(log_weights(&ds, &t), Err(Error::Domain { .. })));
    }

    #[test]
    fn g_max_is_enforced() {
        let t = TiltSpec::exponential(vec![1.0]).with_g_max(1.0);
        let ds = Dataset::from_scalars(&[0.5, 2.0]).unwrap();
        match plugin_measure(&ds, &t) {
            Err(Error::TiltBoundViolation { atom, .. }) => assert_eq!(atom, Some(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coordinate_mean_and_linear_map() {
        let x = array![1.0, 3.0];
        let t = TiltSpec::new(
            TiltFamily::Exponential,
            vec![1.0],
            TiltFunction::CoordinateMean,
            None,
        )
        .unwrap();
        assert!((tilt_weight(x.view(), &t).unwrap() - 2f64.exp()).abs() < 1e-12);
        let t = TiltSpec::new(
            TiltFamily::Exponential,
            vec![1.0],
            TiltFunction::LinearMap(array![[1.0, -1.0]]),
            None,
        )
        .unwrap();
        assert!((tilt_weight(x.view(), &t).unwrap() - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn custom_tilt_function() {
        let g = CustomTilt::new("sq", 1, |x| vec![x[0] * x[0]]);
        let t = TiltSpec::new(TiltFamily::Exponential, vec![1.0], TiltFunction::Custom(g), None)
            .unwrap();
        assert!((tilt_weight(array![2.0].view(), &t).unwrap() - 4f64.exp()).abs() < 1e-9);
        let json = serde_json::to_string(&t).unwrap();
        assert!(serde_json::from_str::<TiltSpec>(&json).is_err());
    }

    #[test]
    fn tilt_spec_json_shape() {
        let t = TiltSpec::exponential(vec![2.0, 2.0]).with_g_max(1.5);
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["family"]["type"], "exponential");
        assert_eq!(v["g"]["kind"], "identity");
        assert_eq!(v["g_max"], 1.5);
        let back: TiltSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back.theta, t.theta);
        let lm: TiltSpec = serde_json::from_str(
            r#"{"family":{"type":"escort","alpha":2.0,"a":1.0,"b":0.5},"theta":[1.0],
                "g":{"kind":"linear_map","params":[[1.0,2.0]]}}"#,
        )
        .unwrap();
        assert!(matches!(lm.g, TiltFunction::LinearMap(_)));
    }

    #[test]
    fn resample_degenerate_weights() {
        let m = WeightedMeasure::new(coin(), vec![1.0, 0.0]).unwrap();
        let out = resample(&m, 5, &mut seeded(1)).unwrap();
        assert!(out.points().iter().all(|v| *v == 0.0));
        let m = WeightedMeasure::new(coin(), vec![0.0, 1.0]).unwrap();
        let out = resample(&m, 5, &mut seeded(1)).unwrap();
        assert!(out.points().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn resample_frequency_and_determinism() {
        let m = plugin_measure(&coin(), &TiltSpec::exponential(vec![2f64.ln()])).unwrap();
        let a = resample(&m, 30_000, &mut seeded(11)).unwrap();
        let b = resample(&m, 30_000, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
        let freq = a.points().sum() / 30_000.0;
        let p: f64 = 2.0 / 3.0;
        let tol = 3.0 * (p * (1.0 - p) / 30_000.0).sqrt();
        assert!((freq - p).abs() < tol, "{freq}");
        assert!(resample(&m, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn ess_examples() {
        let ds = Dataset::from_scalars(&(0..100).map(f64::from).collect::<Vec<_>>()).unwrap();
        let u = WeightedMeasure::uniform(ds);
        assert!((effective_sample_size(&u) - 100.0).abs() < 1e-9);
        let m = WeightedMeasure::new(coin(), vec![1.0, 0.0]).unwrap();
        assert_eq!(effective_sample_size(&m), 1.0);
        let m = WeightedMeasure::new(coin(), vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((effective_sample_size(&m) - 1.8).abs() < 1e-12);
    }

    fn fair_coin(rng: &mut crate::rng::Rng) -> Vec<f64> {
        vec![if rng.random::<bool>() { 1.0 } else { 0.0 }]
    }

    #[test]
    fn rejection_zero_tilt_accepts_everything() {
        let out = rejection_sample_tilted(
            fair_coin,
            &TiltSpec::exponential(vec![0.0]),
            1.0,
            1000,
            &mut seeded(2),
            RejectionConfig::default(),
        )
        .unwrap();
        assert_eq!(out.proposals, 1000);
        assert_eq!(out.acceptance_rate, 1.0);
    }

    #[test]
    fn rejection_two_point_law() {
        let out = rejection_sample_tilted(
            fair_coin,
            &TiltSpec::exponential(vec![2f64.ln()]),
            2.0,
            100_000,
            &mut seeded(3),
            RejectionConfig::default(),
        )
        .unwrap();
        let mass_one = out.samples.points().sum() / 100_000.0;
        assert!((mass_one - 2.0 / 3.0).abs() < 0.01, "{mass_one}");
        // M(θ)/w_bound = 1.5/2
        assert!((out.acceptance_rate - 0.75).abs() < 0.01);
    }

    #[test]
    fn rejection_detects_invalid_bound() {
        let r = rejection_sample_tilted(
            fair_coin,
            &TiltSpec::exponential(vec![2f64.ln()]),
            1.5,
            100,
            &mut seeded(4),
            RejectionConfig::default(),
        );
        assert!(matches!(r, Err(Error::BoundViolation { .. })));
    }

    #[test]
    fn rejection_flags_slow_oracle() {
        let out = rejection_sample_tilted(
            fair_coin,
            &TiltSpec::exponential(vec![0.0]),
            100.0,
            50,
            &mut seeded(5),
            RejectionConfig {
                min_acceptance: 0.05,
                check_after: 100,
            },
        )
        .unwrap();
        assert!(out.slow);
    }
}
