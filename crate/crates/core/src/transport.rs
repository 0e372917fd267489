//! Distances between empirical and weighted measures.
//!
//! * [`wp_1d`]: exact `W_p` on the line via the quantile coupling.
//! * [`sliced_wp`]: power mean of 1-D `W_p` over random unit directions.
//! * [`exact_wp_small`]: brute-force assignment for `n ≤ 8` equal-weight
//!   supports, used as a test oracle.
//! * [`tv_histogram`]: histogram plug-in total variation for `d ≤ 3`.
//! * [`set_discrepancy`]: `|μ(A) − ν(A)|` over a family of boxes.

use ndarray::ArrayView1;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tilt::WeightedMeasure;

/// Sorted atoms on the real line with masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure1D {
    positions: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteMeasure1D {
    /// Sorts, merges coincident atoms and renormalises.
    ///
    /// Masses must be finite, nonnegative and sum to one within `1e-9`.
    pub fn new(positions: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if positions.len() != masses.len() || positions.is_empty() {
            return Err(Error::invalid("positions and masses must be non-empty and equal length"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite position"));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("masses sum to {total}")));
        }
        let mut pairs: Vec<(f64, f64)> = positions.into_iter().zip(masses).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::from_sorted_pairs(pairs, total))
    }

    /// Equal-mass atoms at `values`.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let n = values.len();
        Self::new(values.to_vec(), vec![1.0 / n as f64; n])
    }

    fn from_sorted_pairs(pairs: Vec<(f64, f64)>, total: f64) -> Self {
        let mut positions: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, m) in pairs {
            if m == 0.0 {
                continue;
            }
            match positions.last() {
                Some(&last) if last == x => *masses.last_mut().unwrap() += m,
                _ => {
                    positions.push(x);
                    masses.push(m);
                }
            }
        }
        masses.iter_mut().for_each(|m| *m /= total);
        Self { positions, masses }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Cumulative masses, with the final entry pinned to exactly one.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cum: Vec<f64> = self
            .masses
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        *cum.last_mut().unwrap() = 1.0;
        cum
    }

    /// `T·x` for every atom.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut pairs: Vec<(f64, f64)> = self
            .positions
            .iter()
            .map(|x| x * factor)
            .zip(self.masses.iter().copied())
            .collect();
        if factor < 0.0 {
            pairs.reverse();
        }
        Self::from_sorted_pairs(pairs, 1.0)
    }
}

/// Exact `W_p` between two measures on the line:
/// `(∫₀¹ |F⁻¹(u) − G⁻¹(u)|^p du)^{1/p}`, integrated over the merged
/// cumulative-mass breakpoints.
pub fn wp_1d(a: &DiscreteMeasure1D, b: &DiscreteMeasure1D, p: f64) -> f64 {
    debug_assert!(p >= 1.0);
    wp_1d_pow(a, b, p).powf(1.0 / p)
}

/// `W_p^p` on the line.
pub fn wp_1d_pow(a: &DiscreteMeasure1D, b: &DiscreteMeasure1D, p: f64) -> f64 {
    let ca = a.cumulative();
    let cb = b.cumulative();
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < ca.len() && j < cb.len() {
        let next = ca[i].min(cb[j]);
        let du = next - prev;
        if du > 0.0 {
            total += (a.positions[i] - b.positions[j]).abs().powf(p) * du;
        }
        prev = next;
        if ca[i] == next {
            i += 1;
        }
        if cb[j] == next {
            j += 1;
        }
    }
    total
}

/// Result of a sliced-Wasserstein evaluation.
#[derive(Debug, Clone)]
pub struct SlicedEstimate {
    pub value: f64,
    pub p: f64,
    /// `W_p^p` along each projection.
    pub per_projection: Vec<f64>,
}

impl SlicedEstimate {
    /// Delta-method standard error of `value` due to the finite number of
    /// projections.
    pub fn projection_stderr(&self) -> f64 {
        let k = self.per_projection.len() as f64;
        if k < 2.0 {
            return 0.0;
        }
        let mean = self.per_projection.iter().sum::<f64>() / k;
        let var = self
            .per_projection
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        let se_mean = (var / k).sqrt();
        if self.value == 0.0 {
            return se_mean.powf(1.0 / self.p);
        }
        se_mean / (self.p * self.value.powf(self.p - 1.0))
    }
}

pub const DEFAULT_PROJECTIONS: usize = 128;

/// Sliced `W_p`: `((1/K) Σ_k W_p^p(proj_k X, proj_k Y))^{1/p}` over `K`
/// directions uniform on the sphere.
///
/// Directions come from per-projection substreams of one seed drawn from
/// `rng`, so the value does not depend on the rayon thread count.
pub fn sliced_wp<R: Rng + ?Sized>(
    x: &WeightedMeasure,
    y: &WeightedMeasure,
    p: f64,
    n_proj: usize,
    rng: &mut R,
) -> Result<f64> {
    sliced_wp_detailed(x, y, p, n_proj, rng).map(|e| e.value)
}

pub fn sliced_wp_detailed<R: Rng + ?Sized>(
    x: &WeightedMeasure,
    y: &WeightedMeasure,
    p: f64,
    n_proj: usize,
    rng: &mut R,
) -> Result<SlicedEstimate> {
    if x.d() != y.d() {
        return Err(Error::invalid(format!("dimension mismatch {} vs {}", x.d(), y.d())));
    }
    if n_proj == 0 {
        return Err(Error::invalid("n_proj must be >= 1"));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p must be >= 1, got {p}")));
    }
    let seed: u64 = rng.random();
    let d = x.d();
    let per_projection: Vec<f64> = (0..n_proj)
        .into_par_iter()
        .map(|k| {
            let mut r = substream(seed, k as u64);
            let dir = random_direction(d, &mut r);
            let px = project(x, &dir);
            let py = project(y, &dir);
            wp_1d_pow(&px, &py, p)
        })
        .collect();
    let mean = per_projection.iter().sum::<f64>() / n_proj as f64;
    Ok(SlicedEstimate {
        value: mean.powf(1.0 / p),
        p,
        per_projection,
    })
}

/// Convenience wrapper for two unweighted datasets.
pub fn sliced_wp_datasets<R: Rng + ?Sized>(
    x: &Dataset,
    y: &Dataset,
    p: f64,
    n_proj: usize,
    rng: &mut R,
) -> Result<f64> {
    sliced_wp(
        &WeightedMeasure::uniform(x.clone()),
        &WeightedMeasure::uniform(y.clone()),
        p,
        n_proj,
        rng,
    )
}

fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn project(m: &WeightedMeasure, dir: &[f64]) -> DiscreteMeasure1D {
    let dir = ArrayView1::from(dir);
    let mut pairs: Vec<(f64, f64)> = m
        .atoms()
        .points()
        .rows()
        .into_iter()
        .map(|r| r.dot(&dir))
        .zip(m.weights().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    DiscreteMeasure1D::from_sorted_pairs(pairs, 1.0)
}

/// 1-D measure of a one-column dataset or a weighted measure in `d = 1`.
pub fn to_measure_1d(m: &WeightedMeasure) -> Result<DiscreteMeasure1D> {
    if m.d() != 1 {
        return Err(Error::invalid("expected a one-dimensional measure"));
    }
    Ok(project(m, &[1.0]))
}

pub const EXACT_MAX_N: usize = 8;

/// Exact `W_p` between two equal-size equal-weight point sets by enumerating
/// all `n!` matchings.
pub fn exact_wp_small(x: &Dataset, y: &Dataset, p: f64) -> Result<f64> {
    let n = x.n();
    if y.n() != n {
        return Err(Error::Size(format!("unequal counts {} and {}", n, y.n())));
    }
    if n > EXACT_MAX_N {
        return Err(Error::Size(format!("n = {n} exceeds the oracle cap of {EXACT_MAX_N}")));
    }
    if x.d() != y.d() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let diff = &x.row(i) - &y.row(j);
                    diff.dot(&diff).sqrt().powf(p)
                })
                .collect()
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = eval(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).powf(1.0 / p))
}

/// Per-axis histogram grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramGrid {
    pub bins: Vec<usize>,
    pub ranges: Vec<(f64, f64)>,
}

impl HistogramGrid {
    pub fn new(bins: Vec<usize>, ranges: Vec<(f64, f64)>) -> Result<Self> {
        if bins.len() != ranges.len() || bins.is_empty() {
            return Err(Error::invalid("bins and ranges must have one entry per axis"));
        }
        if bins.len() > 3 {
            return Err(Error::invalid("histogram TV supports d <= 3"));
        }
        if bins.iter().any(|b| *b == 0) || ranges.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::invalid("bins must be positive and ranges non-empty"));
        }
        Ok(Self { bins, ranges })
    }

    /// Same bin count on every axis; ranges span both datasets.
    pub fn covering(x: &Dataset, y: &Dataset, bins: usize) -> Result<Self> {
        let d = x.d();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for ds in [x, y] {
            for row in ds.points().rows() {
                for (k, v) in row.iter().enumerate() {
                    ranges[k].0 = ranges[k].0.min(*v);
                    ranges[k].1 = ranges[k].1.max(*v);
                }
            }
        }
        for r in &mut ranges {
            if r.1 <= r.0 {
                r.0 -= 0.5;
                r.1 += 0.5;
            } else {
                // keep the maximum inside the last bin
                r.1 += (r.1 - r.0) * 1e-9;
            }
        }
        Self::new(vec![bins; d], ranges)
    }

    fn cells(&self) -> usize {
        self.bins.iter().product()
    }

    /// Cell index and whether the point had to be clamped.
    fn locate(&self, x: ArrayView1<'_, f64>) -> (usize, bool) {
        let mut idx = 0;
        let mut clamped = false;
        for (k, v) in x.iter().enumerate() {
            let (lo, hi) = self.ranges[k];
            let b = self.bins[k];
            let raw = ((v - lo) / (hi - lo) * b as f64).floor();
            let cell = if raw < 0.0 {
                clamped = true;
                0
            } else if raw >= b as f64 {
                clamped = true;
                b - 1
            } else {
                raw as usize
            };
            idx = idx * b + cell;
        }
        (idx, clamped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub value: f64,
    /// Points that fell outside the grid and were counted in a boundary cell.
    pub clamped: usize,
}

/// `½ Σ_cells |p̂_X − p̂_Y|` over the grid.
pub fn tv_histogram(x: &Dataset, y: &Dataset, grid: &HistogramGrid) -> Result<TvEstimate> {
    if x.d() != y.d() || x.d() != grid.bins.len() {
        return Err(Error::invalid("dataset and grid dimensions disagree"));
    }
    let mut hx = vec![0.0; grid.cells()];
    let mut hy = vec![0.0; grid.cells()];
    let mut clamped = 0;
    for (ds, hist) in [(x, &mut hx), (y, &mut hy)] {
        let inc = 1.0 / ds.n() as f64;
        for row in ds.points().rows() {
            let (c, cl) = grid.locate(row);
            hist[c] += inc;
            clamped += usize::from(cl);
        }
    }
    if clamped > 0 {
        log::warn!("tv_histogram: {clamped} points outside the grid were counted in boundary cells");
    }
    let value = 0.5 * hx.iter().zip(&hy).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(TvEstimate {
        value: value.min(1.0),
        clamped,
    })
}

/// Axis-aligned box `Π_k [lo_k, hi_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub bounds: Vec<(f64, f64)>,
}

impl AxisBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.iter().any(|(lo, hi)| lo > hi || lo.is_nan() || hi.is_nan()) {
            return Err(Error::invalid("box needs lo <= hi on every axis"));
        }
        Ok(Self { bounds })
    }

    /// The whole space in dimension `d`.
    pub fn everything(d: usize) -> Self {
        Self {
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); d],
        }
    }

    pub fn contains(&self, x: ArrayView1<'_, f64>) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(v, (lo, hi))| *v >= *lo && (*v < *hi || *hi == f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFamily {
    pub boxes: Vec<AxisBox>,
}

/// `|mu(B_j) − nu(B_j)|` for every box.
pub fn set_discrepancy(
    mu: &WeightedMeasure,
    nu: &WeightedMeasure,
    boxes: &BoxFamily,
) -> Result<Vec<f64>> {
    if mu.d() != nu.d() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if boxes.boxes.iter().any(|b| b.bounds.len() != mu.d()) {
        return Err(Error::invalid("box dimension mismatch"));
    }
    Ok(boxes
        .boxes
        .iter()
        .map(|b| (mu.mass_where(|x| b.contains(x)) - nu.mass_where(|x| b.contains(x))).abs())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn m1(x: &[f64], w: &[f64]) -> DiscreteMeasure1D {
        DiscreteMeasure1D::new(x.to_vec(), w.to_vec()).unwrap()
    }

    #[test]
    fn wp_1d_hand_values() {
        let a = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let b = m1(&[0.0, 2.0], &[0.5, 0.5]);
        assert!((wp_1d(&a, &b, 1.0) - 0.5).abs() < 1e-15);
        assert!((wp_1d(&a, &b, 2.0) - 0.5f64.sqrt()).abs() < 1e-15);
        let c = m1(&[0.0, 1.0], &[0.75, 0.25]);
        assert!((wp_1d(&c, &a, 1.0) - 0.25).abs() < 1e-15);
        assert_eq!(wp_1d(&a, &a, 2.0), 0.0);
    }

    #[test]
    fn merges_coincident_atoms() {
        let a = m1(&[1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]);
        assert_eq!(a.positions(), &[0.0, 1.0]);
        assert_eq!(a.masses(), &[0.5, 0.5]);
        assert!(DiscreteMeasure1D::new(vec![0.0], vec![0.5]).is_err());
    }

    #[test]
    fn sliced_identical_is_zero() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let v = sliced_wp_datasets(&ds, &ds, 2.0, 16, &mut seeded(0)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn sliced_in_one_dimension_equals_exact() {
        let mut rng = seeded(9);
        let x: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..17).map(|_| rng.random::<f64>() * 2.0).collect();
        let exact = wp_1d(
            &DiscreteMeasure1D::uniform(&x).unwrap(),
            &DiscreteMeasure1D::uniform(&y).unwrap(),
            2.0,
        );
        let xs = Dataset::from_scalars(&x).unwrap();
        let ys = Dataset::from_scalars(&y).unwrap();
        for seed in 0..3 {
            let s = sliced_wp_datasets(&xs, &ys, 2.0, 5, &mut seeded(seed)).unwrap();
            assert!((s - exact).abs() <= 1e-12 * exact.max(1.0), "{s} {exact}");
        }
    }

    #[test]
    fn sliced_two_point_masses_in_plane() {
        let x = Dataset::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let y = Dataset::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let s = sliced_wp_datasets(&x, &y, 2.0, 4096, &mut seeded(1)).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 0.02, "{s}");
    }

    #[test]
    fn sliced_is_deterministic_and_checks_inputs() {
        let x = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let y = Dataset::from_rows(&[vec![1.0, 0.5]]).unwrap();
        let a = sliced_wp_datasets(&x, &y, 2.0, 64, &mut seeded(4)).unwrap();
        let b = sliced_wp_datasets(&x, &y, 2.0, 64, &mut seeded(4)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let z = Dataset::from_scalars(&[1.0]).unwrap();
        assert!(sliced_wp_datasets(&x, &z, 2.0, 4, &mut seeded(0)).is_err());
        assert!(sliced_wp_datasets(&x, &y, 2.0, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn exact_small_examples() {
        let x = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let y = Dataset::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((exact_wp_small(&x, &y, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((exact_wp_small(&x, &y, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let xr = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(exact_wp_small(&x, &xr, 2.0).unwrap(), 0.0);
        let a = Dataset::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = Dataset::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert!((exact_wp_small(&a, &b, 1.5).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn exact_small_size_cap() {
        let x = Dataset::from_scalars(&[0.0; 9]).unwrap();
        assert!(matches!(exact_wp_small(&x, &x, 1.0), Err(Error::Size(_))));
    }

    #[test]
    fn tv_examples() {
        let x = Dataset::from_scalars(&[0.1, 0.2, 0.9]).unwrap();
        let grid = HistogramGrid::new(vec![2], vec![(0.0, 1.0)]).unwrap();
        assert_eq!(tv_histogram(&x, &x, &grid).unwrap().value, 0.0);
        let y = Dataset::from_scalars(&[0.6, 0.7]).unwrap();
        let z = Dataset::from_scalars(&[0.1, 0.2]).unwrap();
        assert_eq!(tv_histogram(&y, &z, &grid).unwrap().value, 1.0);
        let out = Dataset::from_scalars(&[-3.0, 0.2]).unwrap();
        let est = tv_histogram(&out, &z, &grid).unwrap();
        assert_eq!(est.clamped, 1);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn tv_coin_vs_tilted_coin() {
        let mut rng = seeded(21);
        let n = 100_000;
        let a: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5))).collect();
        let b: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.random::<f64>() < 2.0 / 3.0)))
            .collect();
        let grid = HistogramGrid::new(vec![2], vec![(-0.5, 1.5)]).unwrap();
        let tv = tv_histogram(
            &Dataset::from_scalars(&a).unwrap(),
            &Dataset::from_scalars(&b).unwrap(),
            &grid,
        )
        .unwrap();
        assert!((tv.value - 1.0 / 6.0).abs() < 0.02, "{}", tv.value);
    }

    #[test]
    fn set_discrepancy_examples() {
        let coin = Dataset::from_scalars(&[0.0, 1.0]).unwrap();
        let a = WeightedMeasure::new(coin.clone(), vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let b = WeightedMeasure::uniform(coin);
        let fam = BoxFamily {
            boxes: vec![
                AxisBox::new(vec![(0.5, 1.5)]).unwrap(),
                AxisBox::everything(1),
            ],
        };
        let v = set_discrepancy(&a, &b, &fam).unwrap();
        assert!((v[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!(v[1].abs() < 1e-15);
        assert_eq!(set_discrepancy(&a, &a, &fam).unwrap(), vec![0.0, 0.0]);

        let d0 = WeightedMeasure::uniform(Dataset::from_scalars(&[0.0]).unwrap());
        let d1 = WeightedMeasure::uniform(Dataset::from_scalars(&[1.0]).unwrap());
        let fam = BoxFamily {
            boxes: vec![AxisBox::new(vec![(-0.5, 0.5)]).unwrap()],
        };
        assert_eq!(set_discrepancy(&d0, &d1, &fam).unwrap(), vec![1.0]);
    }

    #[test]
    fn box_is_lo_inclusive_hi_exclusive() {
        let b = AxisBox::new(vec![(0.0, 1.0)]).unwrap();
        assert!(b.contains(ndarray::array![0.0].view()));
        assert!(!b.contains(ndarray::array![1.0].view()));
        assert!(AxisBox::new(vec![(1.0, 0.0)]).is_err());
    }
}
