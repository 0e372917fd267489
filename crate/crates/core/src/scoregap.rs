//! Synthetic score-error fields and the perturbation inequalities relating
//! the denoiser-error gap `Δ(μ, ν, f)` to Wasserstein distances.
//!
//! Every measure here is the uniform empirical measure of a [`Dataset`], so
//! `W_1` and `W_2` can be computed exactly and the only randomness left in a
//! check is the Monte Carlo over `t` and the forward noise.

use std::io::Write;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::transport::{exact_wp_small, wp_1d, DiscreteMeasure1D, EXACT_MAX_N};

/// Time profile `c_t` of an error field's coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { c: f64 },
    /// `c · t^k`; unbounded near 0 when `k < 0`.
    Power { c: f64, k: f64 },
}

impl Coefficient {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Coefficient::Constant { c } => c,
            Coefficient::Power { c, k } => c * t.powf(k),
        }
    }
}

/// Closed-form error field `f_t`, with `L_t = |c_t|` as its Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorFieldSpec {
    /// `f_t(x) = c_t x`
    Linear { coef: Coefficient },
    /// `f_t(x) = c_t x + b`
    Affine { coef: Coefficient, offset: Vec<f64> },
    /// `f_t(x) = c_t clamp(x, −r, r)` coordinatewise.
    ClippedLinear { coef: Coefficient, radius: f64 },
}

impl ErrorFieldSpec {
    pub fn coefficient(&self) -> Coefficient {
        match self {
            ErrorFieldSpec::Linear { coef }
            | ErrorFieldSpec::Affine { coef, .. }
            | ErrorFieldSpec::ClippedLinear { coef, .. } => *coef,
        }
    }

    pub fn lipschitz(&self, t: f64) -> f64 {
        self.coefficient().at(t).abs()
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>, t: f64) -> Array1<f64> {
        let c = self.coefficient().at(t);
        match self {
            ErrorFieldSpec::Linear { .. } => x.mapv(|v| c * v),
            ErrorFieldSpec::Affine { offset, .. } => {
                Array1::from_iter(x.iter().zip(offset).map(|(v, b)| c * v + b))
            }
            ErrorFieldSpec::ClippedLinear { radius, .. } => x.mapv(|v| c * v.clamp(-radius, *radius)),
        }
    }

    /// `‖f_t(x)‖²`, without allocating.
    fn sq_norm(&self, x: impl Iterator<Item = f64>, t: f64) -> f64 {
        let c = self.coefficient().at(t);
        match self {
            ErrorFieldSpec::Linear { .. } => x.map(|v| (c * v).powi(2)).sum(),
            ErrorFieldSpec::Affine { offset, .. } => {
                x.zip(offset).map(|(v, b)| (c * v + b).powi(2)).sum()
            }
            ErrorFieldSpec::ClippedLinear { radius, .. } => {
                x.map(|v| (c * v.clamp(-radius, *radius)).powi(2)).sum()
            }
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            ErrorFieldSpec::Affine { offset, .. } if offset.len() != d => {
                Err(Error::invalid(format!("offset has length {}, expected {d}", offset.len())))
            }
            ErrorFieldSpec::ClippedLinear { radius, .. } if !(*radius > 0.0) => {
                Err(Error::invalid("clip radius must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Largest secant slope `‖f_t(x) − f_t(y)‖ / ‖x − y‖` over random pairs,
    /// minus the declared `L_t`. Nonpositive (up to rounding) for a correct
    /// declaration.
    pub fn secant_excess<R: Rng + ?Sized>(&self, d: usize, t: f64, trials: usize, rng: &mut R) -> f64 {
        let lt = self.lipschitz(t);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..trials {
            let x: Array1<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Array1<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let gap = (&x - &y).mapv(|v| v * v).sum().sqrt();
            if gap == 0.0 {
                continue;
            }
            let df = self.eval(x.view(), t) - self.eval(y.view(), t);
            worst = worst.max(df.mapv(|v| v * v).sum().sqrt() / gap - lt);
        }
        worst
    }
}

/// `C_η = (1/T) ∫₀ᵀ L_t² e^{−2ηt} dt`.
pub fn c_eta(field: &ErrorFieldSpec, schedule: &NoiseSchedule) -> Result<f64> {
    schedule.validate()?;
    let (eta, big_t) = (schedule.eta, schedule.horizon);
    match field.coefficient() {
        Coefficient::Constant { c } => Ok(c * c * -(-2.0 * eta * big_t).exp_m1() / (2.0 * eta * big_t)),
        Coefficient::Power { c, k } => {
            // ∫ t^{2k} e^{−2ηt} dt with s = 2k + 1; u = t^s turns it into
            // (1/s) ∫₀^{T^s} exp(−2η u^{1/s}) du, which has a bounded integrand.
            let s = 2.0 * k + 1.0;
            if !(s > 0.0) {
                return Err(Error::Regime(format!(
                    "C_eta diverges: L_t^2 ~ t^{} is not integrable at 0",
                    2.0 * k
                )));
            }
            if c == 0.0 {
                return Ok(0.0);
            }
            let integral =
                adaptive_simpson(&|u: f64| (-2.0 * eta * u.powf(1.0 / s)).exp(), 0.0, big_t.powf(s), 1e-12)
                    / s;
            Ok(c * c * integral / big_t)
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 40)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Inner expectations over the empirical measure use every atom when there
/// are at most this many, otherwise this many random atoms.
const INNER_ATOMS: usize = 64;
/// Antithetic noise pairs per time draw, shared between both measures.
const NOISE_PAIRS: usize = 8;

/// `E_ρ ‖f_t(x_t)‖²` at a fixed `t` for the empirical measure `ρ`, averaged
/// over the shared antithetic noise draws.
fn inner_mean<R: Rng + ?Sized>(
    field: &ErrorFieldSpec,
    rho: &Dataset,
    t: f64,
    schedule: &NoiseSchedule,
    noise: &[Vec<f64>],
    rng: &mut R,
) -> f64 {
    let (a, sd) = (schedule.mean_coeff(t), schedule.noise_var(t).sqrt());
    let atoms: Vec<usize> = if rho.n() <= INNER_ATOMS {
        (0..rho.n()).collect()
    } else {
        (0..INNER_ATOMS).map(|_| rng.random_range(0..rho.n())).collect()
    };
    let mut total = 0.0;
    for &i in &atoms {
        let x0 = rho.row(i);
        for e in noise {
            for sign in [1.0, -1.0] {
                let xt = x0.iter().zip(e).map(|(x, e)| a * x + sign * sd * e);
                total += field.sq_norm(xt, t);
            }
        }
    }
    total / (atoms.len() * noise.len() * 2) as f64
}

fn time_draw<R: Rng + ?Sized>(schedule: &NoiseSchedule, rng: &mut R) -> f64 {
    // (0, T], so power profiles with k < 0 stay finite
    schedule.horizon * (1.0 - rng.random::<f64>())
}

fn noise_block<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..NOISE_PAIRS)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn summarize(values: &[f64]) -> GapEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    GapEstimate {
        value: mean,
        stderr: (var / n).sqrt(),
    }
}

/// Monte Carlo estimate of `E_{t~U[0,T]} |E_μ‖f_t(x_t)‖² − E_ν‖f_t(y_t)‖²|`.
///
/// Both inner expectations see the same `t` and the same noise draws, and the
/// absolute value is taken per `t`. Noise is antithetic, which makes the inner
/// expectations exact for linear and affine fields.
pub fn delta_hat<R: Rng + ?Sized>(
    field: &ErrorFieldSpec,
    mu: &Dataset,
    nu: &Dataset,
    schedule: &NoiseSchedule,
    n_mc: usize,
    rng: &mut R,
) -> Result<GapEstimate> {
    if mu.d() != nu.d() {
        return Err(Error::invalid("mu and nu differ in dimension"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be positive"));
    }
    field.validate(mu.d())?;
    schedule.validate()?;
    let values: Vec<f64> = (0..n_mc)
        .map(|_| {
            let t = time_draw(schedule, rng);
            let noise = noise_block(mu.d(), rng);
            let a = inner_mean(field, mu, t, schedule, &noise, rng);
            let b = inner_mean(field, nu, t, schedule, &noise, rng);
            (a - b).abs()
        })
        .collect();
    let est = summarize(&values);
    if !est.value.is_finite() {
        return Err(Error::numerics("delta_hat"));
    }
    Ok(est)
}

/// Denoiser loss `l(ρ) = (1/T) ∫ E_ρ‖f_t(x_t)‖² dt` through the same harness
/// as [`delta_hat`]; used as `ε²`.
pub fn field_loss<R: Rng + ?Sized>(
    field: &ErrorFieldSpec,
    rho: &Dataset,
    schedule: &NoiseSchedule,
    n_mc: usize,
    rng: &mut R,
) -> Result<GapEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be positive"));
    }
    field.validate(rho.d())?;
    schedule.validate()?;
    let values: Vec<f64> = (0..n_mc)
        .map(|_| {
            let t = time_draw(schedule, rng);
            let noise = noise_block(rho.d(), rng);
            inner_mean(field, rho, t, schedule, &noise, rng)
        })
        .collect();
    Ok(summarize(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapVariant {
    /// `C_η W₂² + 2√C_η W₂ ε`
    Unbounded,
    /// `(2 C_η M + 2√C_η ε) W₂`, supports inside `‖x‖ ≤ M`.
    Bounded,
    /// `K W₁ + 2√(K ε) √W₁` with `K = 2 M C_η`.
    W1,
}

impl GapVariant {
    pub const ALL: [GapVariant; 3] = [GapVariant::Unbounded, GapVariant::Bounded, GapVariant::W1];

    pub fn name(&self) -> &'static str {
        match self {
            GapVariant::Unbounded => "unbounded_w2",
            GapVariant::Bounded => "bounded_w2",
            GapVariant::W1 => "bounded_w1",
        }
    }
}

/// Right-hand side of the gap inequality. `w` is `W₂` for the first two
/// variants and `W₁` for [`GapVariant::W1`].
pub fn prop32_rhs(variant: GapVariant, w: f64, c_eta: f64, eps: f64, m: Option<f64>) -> Result<f64> {
    if !(eps >= 0.0) || !(w >= 0.0) || !(c_eta >= 0.0) {
        return Err(Error::invalid("w, c_eta and eps must be nonnegative"));
    }
    let bound = |name: &str| {
        m.filter(|v| *v >= 0.0)
            .ok_or_else(|| Error::MissingBound(format!("{name} needs the support radius M")))
    };
    Ok(match variant {
        GapVariant::Unbounded => c_eta * w * w + 2.0 * c_eta.sqrt() * w * eps,
        GapVariant::Bounded => (2.0 * c_eta * bound("bounded_w2")? + 2.0 * c_eta.sqrt() * eps) * w,
        GapVariant::W1 => {
            let k = 2.0 * bound("bounded_w1")? * c_eta;
            k * w + 2.0 * (k * eps).sqrt() * w.sqrt()
        }
    })
}

/// Exact `W_p` between two uniform empirical measures: quantile coupling on
/// the line, permutation enumeration otherwise.
pub fn exact_wp(mu: &Dataset, nu: &Dataset, p: f64) -> Result<f64> {
    if mu.d() == 1 {
        let col = |ds: &Dataset| ds.points().column(0).to_vec();
        let a = DiscreteMeasure1D::uniform(&col(mu))?;
        let b = DiscreteMeasure1D::uniform(&col(nu))?;
        return Ok(wp_1d(&a, &b, p));
    }
    exact_wp_small(mu, nu, p)
}

/// One randomized inequality instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapInstance {
    pub id: usize,
    pub field: ErrorFieldSpec,
    pub schedule: NoiseSchedule,
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryConfig {
    pub instances: usize,
    pub n_mc: usize,
    pub seed: u64,
    /// Allowed Monte Carlo slack, in standard errors of `Δ̂`. A negative
    /// value demands a strict gap instead.
    pub margin_sigmas: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            instances: 60,
            n_mc: 2000,
            seed: 0,
            margin_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub instance: usize,
    pub variant: GapVariant,
    pub delta_hat: f64,
    pub rhs: f64,
    /// `rhs − Δ̂`
    pub margin: f64,
    pub stderr: f64,
    pub holds: bool,
    pub w: f64,
    pub c_eta: f64,
    pub eps: f64,
}

/// Instance `id` of the battery: point masses or small uniform mixtures in
/// `d ∈ {1, 2}` under linear, affine or clipped fields. Instance 0 has a zero
/// field.
pub fn battery_instance(seed: u64, id: usize) -> GapInstance {
    let mut rng = seeded(derive_seed(&[seed, id as u64]));
    let d = if rng.random_bool(0.5) { 1 } else { 2 };
    let n = if rng.random_bool(0.3) { 1 } else { rng.random_range(2..=EXACT_MAX_N.min(5)) };
    let cloud = |rng: &mut crate::rng::Rng, shift: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0) + shift).collect())
            .collect()
    };
    let mu = cloud(&mut rng, 0.0);
    let shift = rng.random_range(-0.5..0.5);
    let mut nu = cloud(&mut rng, shift);
    if rng.random_bool(0.2) {
        // near-coincident measures probe the small-W regime
        nu = mu.iter().map(|r| r.iter().map(|v| v + 0.01 * shift).collect()).collect();
    }
    let coef = if id == 0 {
        Coefficient::Constant { c: 0.0 }
    } else if rng.random_bool(0.5) {
        Coefficient::Constant {
            c: rng.random_range(-2.0..2.0),
        }
    } else {
        let ks = [-0.1, 0.5, 1.0];
        Coefficient::Power {
            c: rng.random_range(-2.0..2.0),
            k: ks[rng.random_range(0..ks.len())],
        }
    };
    let field = match rng.random_range(0..3) {
        0 => ErrorFieldSpec::Linear { coef },
        1 => ErrorFieldSpec::Affine {
            coef,
            offset: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
        _ => ErrorFieldSpec::ClippedLinear {
            coef,
            radius: rng.random_range(0.5..2.0),
        },
    };
    let schedule = NoiseSchedule {
        eta: rng.random_range(0.5..2.0),
        sigma: rng.random_range(0.5..1.5),
        horizon: rng.random_range(0.5..3.0),
        steps: 100,
    };
    GapInstance {
        id,
        field,
        schedule,
        mu,
        nu,
    }
}

/// Evaluates one instance against all three variants.
pub fn check_instance(inst: &GapInstance, config: &BatteryConfig) -> Result<Vec<BatteryRow>> {
    let mu = Dataset::from_rows(&inst.mu)?;
    let nu = Dataset::from_rows(&inst.nu)?;
    let mut rng = seeded(derive_seed(&[config.seed, inst.id as u64, 1]));
    let ce = c_eta(&inst.field, &inst.schedule)?;
    let eps = field_loss(&inst.field, &nu, &inst.schedule, config.n_mc, &mut rng)?.value.sqrt();
    let gap = delta_hat(&inst.field, &mu, &nu, &inst.schedule, config.n_mc, &mut rng)?;
    let w2 = exact_wp(&mu, &nu, 2.0)?;
    let w1 = exact_wp(&mu, &nu, 1.0)?;
    let m = mu.max_norm().max(nu.max_norm());
    GapVariant::ALL
        .iter()
        .map(|&variant| {
            let w = if variant == GapVariant::W1 { w1 } else { w2 };
            let rhs = prop32_rhs(variant, w, ce, eps, Some(m))?;
            Ok(BatteryRow {
                instance: inst.id,
                variant,
                delta_hat: gap.value,
                rhs,
                margin: rhs - gap.value,
                stderr: gap.stderr,
                holds: gap.value <= rhs + config.margin_sigmas * gap.stderr,
                w,
                c_eta: ce,
                eps,
            })
        })
        .collect()
}

pub fn run_battery(config: &BatteryConfig) -> Result<Vec<BatteryRow>> {
    let mut rows = Vec::with_capacity(3 * config.instances);
    for id in 0..config.instances {
        rows.extend(check_instance(&battery_instance(config.seed, id), config)?);
    }
    Ok(rows)
}

pub fn write_battery_csv<W: Write>(rows: &[BatteryRow], w: &mut W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "instance", "variant", "delta_hat", "rhs", "margin", "stderr", "holds", "w", "c_eta", "eps",
    ])
    .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.instance.to_string(),
            r.variant.name().to_string(),
            r.delta_hat.to_string(),
            r.rhs.to_string(),
            r.margin.to_string(),
            r.stderr.to_string(),
            r.holds.to_string(),
            r.w.to_string(),
            r.c_eta.to_string(),
            r.eps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
