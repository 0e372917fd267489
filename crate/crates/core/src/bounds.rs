//! Closed-form tilt functionals and convergence bounds.
//!
//! Everything here is a direct evaluator: moment-generating functionals
//! `M(kθ) = E[exp(k θᵀ g(x))]`, tilted moments, the derived constants
//! `C_w`, `W_k` and `V`, the three expected-`T_p` bounds (i.i.d., tilted
//! with unbounded `g`, tilted with bounded `g`), the per-set discrepancy
//! bound and the asymptotic variance of the plug-in mass of a set.
//!
//! The bounds carry an unspecified universal constant `C`; callers pass it
//! explicitly (the experiment drivers use `C = 1`), so only the dependence on
//! `N` and `θ` is meaningful.
//!
//! `V` is `exp(‖θ‖ g_max) M(2θ) / M(θ)`.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tilt::{TiltFamily, TiltSpec};
use crate::transport::AxisBox;

/// Atoms with explicit masses, used for exact evaluation.
#[derive(Debug, Clone)]
pub struct FiniteMeasure {
    atoms: Dataset,
    masses: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(atoms: Dataset, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != atoms.n() {
            return Err(Error::invalid("one mass per atom required"));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("masses sum to {total}")));
        }
        Ok(Self { atoms, masses })
    }

    /// Fair coin on `{0, 1}`.
    pub fn fair_coin() -> Self {
        Self::new(Dataset::from_scalars(&[0.0, 1.0]).unwrap(), vec![0.5, 0.5]).unwrap()
    }

    pub fn atoms(&self) -> &Dataset {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Where tilt functionals are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// Exact sums over a finite measure.
    Exact(&'a FiniteMeasure),
    /// Sample means over i.i.d. draws; `seed` records how they were drawn.
    MonteCarlo {
        samples: &'a Dataset,
        seed: Option<u64>,
    },
}

impl<'a> Source<'a> {
    pub fn samples(samples: &'a Dataset) -> Self {
        Source::MonteCarlo {
            samples,
            seed: None,
        }
    }

    fn atoms(&self) -> &'a Dataset {
        match self {
            Source::Exact(m) => &m.atoms,
            Source::MonteCarlo { samples, .. } => samples,
        }
    }

    fn mass(&self, i: usize) -> f64 {
        match self {
            Source::Exact(m) => m.masses[i],
            Source::MonteCarlo { samples, .. } => 1.0 / samples.n() as f64,
        }
    }

    pub fn mode(&self) -> EstimationMode {
        match self {
            Source::Exact(_) => EstimationMode::ExactDiscrete,
            Source::MonteCarlo { samples, seed } => EstimationMode::MonteCarlo {
                n: samples.n(),
                seed: *seed,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimationMode {
    ExactDiscrete,
    MonteCarlo { n: usize, seed: Option<u64> },
}

fn require_exponential(tilt: &TiltSpec) -> Result<()> {
    if tilt.family != TiltFamily::Exponential {
        return Err(Error::invalid("tilt functionals are defined for the exponential family"));
    }
    tilt.validate()
}

/// `(log mass_j + k θᵀg(x_j), in_box)` for every atom.
fn scaled_terms(
    source: Source<'_>,
    tilt: &TiltSpec,
    k: f64,
    set: Option<&AxisBox>,
) -> Result<Vec<f64>> {
    source
        .atoms()
        .points()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let m = source.mass(i);
            let inside = set.is_none_or(|b| b.contains(x));
            if m == 0.0 || !inside {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(m.ln() + k * tilt.statistic(x)?)
        })
        .collect()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `log M(kθ)`; never overflows.
pub fn log_mgf(source: Source<'_>, tilt: &TiltSpec, k: f64) -> Result<f64> {
    require_exponential(tilt)?;
    Ok(log_sum_exp(&scaled_terms(source, tilt, k, None)?))
}

/// `M(kθ) = E[exp(k θᵀ g(x))]` (exact sum or sample mean).
pub fn mgf(source: Source<'_>, tilt: &TiltSpec, k: f64) -> Result<f64> {
    let l = log_mgf(source, tilt, k)?;
    let v = l.exp();
    if !v.is_finite() {
        return Err(Error::Overflow(format!("M({k}θ) = exp({l})")));
    }
    Ok(v)
}

/// `M(kθ, A) = E[exp(k θᵀ g(x)) 1{x ∈ A}]`.
pub fn mgf_on_set(source: Source<'_>, tilt: &TiltSpec, k: f64, set: &AxisBox) -> Result<f64> {
    require_exponential(tilt)?;
    let l = log_sum_exp(&scaled_terms(source, tilt, k, Some(set))?);
    let v = l.exp();
    if !v.is_finite() {
        return Err(Error::Overflow(format!("M({k}θ, A) = exp({l})")));
    }
    Ok(v)
}

/// Standard error of the Monte Carlo estimate of `M(kθ)` (zero in exact mode).
pub fn mgf_stderr(source: Source<'_>, tilt: &TiltSpec, k: f64) -> Result<f64> {
    match source {
        Source::Exact(_) => Ok(0.0),
        Source::MonteCarlo { samples, .. } => {
            let m1 = mgf(source, tilt, k)?;
            let m2 = mgf(source, tilt, 2.0 * k)?;
            let n = samples.n() as f64;
            Ok(((m2 - m1 * m1).max(0.0) / n).sqrt())
        }
    }
}

/// `M_q(μ_{sθ}) = E_{μ_{sθ}} ‖x‖^q`, self-normalised.
pub fn moment_q_tilted(source: Source<'_>, tilt: &TiltSpec, q: f64, theta_scale: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::invalid(format!("q must be positive, got {q}")));
    }
    require_exponential(tilt)?;
    let terms = scaled_terms(source, tilt, theta_scale, None)?;
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, t) in source.atoms().points().rows().into_iter().zip(&terms) {
        let w = (t - max).exp();
        num += w * norm(x).powf(q);
        den += w;
    }
    Ok(num / den)
}

fn norm(x: ArrayView1<'_, f64>) -> f64 {
    x.dot(&x).sqrt()
}

/// `W_k = M(kθ)^{1/k} / M((k/2)θ)^{2/k}`, computed in log space.
pub fn w_k(source: Source<'_>, tilt: &TiltSpec, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::invalid("k must be positive"));
    }
    let a = log_mgf(source, tilt, k)?;
    let b = log_mgf(source, tilt, k / 2.0)?;
    Ok((a / k - 2.0 * b / k).exp())
}

/// Constants entering the tilted convergence bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TiltQuantities {
    pub m_theta: f64,
    pub m_2theta: f64,
    pub m_minus2theta: f64,
    /// `M(−2θ) M(2θ)`.
    pub c_w: f64,
    /// `√M(2θ) / M(θ)`.
    pub w_2: f64,
    /// `exp(‖θ‖ g_max) M(2θ) / M(θ)`, present when `g_max` is known.
    pub v: Option<f64>,
    pub g_max: Option<f64>,
    pub theta_norm: f64,
    pub estimation_mode: EstimationMode,
}

impl TiltQuantities {
    pub fn require_v(&self) -> Result<f64> {
        self.v
            .ok_or_else(|| Error::MissingBound("V requires g_max on the tilt".into()))
    }
}

/// Fills every [`TiltQuantities`] field; `V` only when the tilt has `g_max`.
pub fn tilt_quantities(source: Source<'_>, tilt: &TiltSpec) -> Result<TiltQuantities> {
    require_exponential(tilt)?;
    let l1 = log_mgf(source, tilt, 1.0)?;
    let l2 = log_mgf(source, tilt, 2.0)?;
    let lm2 = log_mgf(source, tilt, -2.0)?;
    let finite = |l: f64, what: &str| {
        let v = l.exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow(format!("{what} = exp({l})")))
        }
    };
    let theta_norm = tilt.theta_norm();
    Ok(TiltQuantities {
        m_theta: finite(l1, "M(θ)")?,
        m_2theta: finite(l2, "M(2θ)")?,
        m_minus2theta: finite(lm2, "M(-2θ)")?,
        c_w: finite(lm2 + l2, "C_w")?,
        w_2: (0.5 * l2 - l1).exp(),
        v: tilt
            .g_max
            .map(|g| finite(theta_norm * g + l2 - l1, "V"))
            .transpose()?,
        g_max: tilt.g_max,
        theta_norm,
        estimation_mode: source.mode(),
    })
}

fn check_regime(p: f64, q: f64, d: f64) -> Result<()> {
    if !(p > 0.0) {
        return Err(Error::Regime(format!("p > 0 (p = {p})")));
    }
    if !(q > p) {
        return Err(Error::Regime(format!("q > p (q = {q}, p = {p})")));
    }
    let need = q * p / (q - p);
    if !(d > need) {
        return Err(Error::Regime(format!("d > qp/(q-p) (d = {d}, qp/(q-p) = {need})")));
    }
    Ok(())
}

fn check_n(n: f64) -> Result<()> {
    if !(n >= 1.0) {
        return Err(Error::invalid(format!("sample size must be >= 1, got {n}")));
    }
    Ok(())
}

/// `C · M_q^{p/q} · (N^{−p/d} + N^{−1/2})`, the i.i.d. empirical rate.
pub fn bound_iid(n: f64, p: f64, q: f64, d: usize, mq: f64, c: f64) -> Result<f64> {
    check_n(n)?;
    let df = d as f64;
    check_regime(p, q, df)?;
    if !(p < df / 2.0) {
        return Err(Error::Regime(format!("p < d/2 (p = {p}, d = {d})")));
    }
    Ok(c * mq.powf(p / q) * (n.powf(-p / df) + n.powf(-0.5)))
}

/// `C · M_q(μ_{2θ})^{p/q} · C_w · (N^{−p/d} + W_2 N^{−1/2})`.
pub fn bound_tilted_unbounded(
    n: f64,
    p: f64,
    q: f64,
    d: usize,
    quantities: &TiltQuantities,
    mq_2theta: f64,
    c: f64,
) -> Result<f64> {
    check_n(n)?;
    let df = d as f64;
    check_regime(p, q, df)?;
    Ok(c * mq_2theta.powf(p / q)
        * quantities.c_w
        * (n.powf(-p / df) + quantities.w_2 * n.powf(-0.5)))
}

/// `C · M_q(μ_θ)^{p/q} · (V N^{−p/d} + N^{−1/2})`; needs `g_max`.
pub fn bound_tilted_bounded(
    n: f64,
    p: f64,
    q: f64,
    d: usize,
    quantities: &TiltQuantities,
    mq_theta: f64,
    c: f64,
) -> Result<f64> {
    let v = quantities.require_v()?;
    check_n(n)?;
    let df = d as f64;
    check_regime(p, q, df)?;
    Ok(c * mq_theta.powf(p / q) * (v * n.powf(-p / df) + n.powf(-0.5)))
}

/// `(1/√n) √C_w (√μ_{2θ}(A) + μ_θ(A))`, the bound on `E|μ_θ − μ_{n,θ}|(A)`.
pub fn lemma_discrepancy_rhs(
    n: f64,
    quantities: &TiltQuantities,
    mu2theta_a: f64,
    mutheta_a: f64,
) -> Result<f64> {
    check_n(n)?;
    for m in [mu2theta_a, mutheta_a] {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::invalid(format!("set mass {m} outside [0, 1]")));
        }
    }
    Ok(quantities.c_w.sqrt() * (mu2theta_a.sqrt() + mutheta_a) / n.sqrt())
}

/// Asymptotic variance `σ²` of `√n (μ_{n,θ}(A) − μ_θ(A))`, evaluated exactly
/// on a finite measure by the delta method applied to
/// `(mean of w 1_A, mean of w)`.
pub fn plugin_clt_sigma(measure: &FiniteMeasure, tilt: &TiltSpec, set: &AxisBox) -> Result<f64> {
    require_exponential(tilt)?;
    let source = Source::Exact(measure);
    // σ² is invariant to rescaling every weight, so shift the statistic by
    // its maximum before exponentiating.
    let stats: Vec<f64> = measure
        .atoms
        .points()
        .rows()
        .into_iter()
        .map(|x| tilt.statistic(x))
        .collect::<Result<_>>()?;
    let shift = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut m1a = 0.0;
    let mut m2a = 0.0;
    for ((x, s), mass) in source
        .atoms()
        .points()
        .rows()
        .into_iter()
        .zip(&stats)
        .zip(&measure.masses)
    {
        let w = (s - shift).exp();
        m1 += mass * w;
        m2 += mass * w * w;
        if set.contains(x) {
            m1a += mass * w;
            m2a += mass * w * w;
        }
    }
    let var_u = m2a - m1a * m1a;
    let var_v = m2 - m1 * m1;
    let cov = m2a - m1 * m1a;
    let sigma2 = var_u / m1.powi(2) - 2.0 * m1a / m1.powi(3) * cov
        + m1a.powi(2) / m1.powi(4) * var_v;
    Ok(sigma2.max(0.0))
}
