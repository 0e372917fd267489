use proptest::prelude::*;

use tiltdiff::rng::seeded;
use tiltdiff::tilt::{effective_sample_size, plugin_measure};
use tiltdiff::transport::{exact_wp_small, sliced_wp_datasets, wp_1d, DiscreteMeasure1D};
use tiltdiff::{Dataset, TiltSpec};

fn rows(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n)
}

fn scalars(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n)
}

fn w(x: &[f64], y: &[f64], p: f64) -> f64 {
    wp_1d(
        &DiscreteMeasure1D::uniform(x).unwrap(),
        &DiscreteMeasure1D::uniform(y).unwrap(),
        p,
    )
}

/// Minimum over all matchings, by recursion on the first unmatched row.
fn brute_force(x: &Dataset, y: &Dataset, p: f64) -> f64 {
    fn go(x: &Dataset, y: &Dataset, p: f64, i: usize, used: &mut Vec<bool>) -> f64 {
        if i == x.n() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..y.n() {
            if used[j] {
                continue;
            }
            used[j] = true;
            let diff = &x.row(i) - &y.row(j);
            let c = diff.dot(&diff).sqrt().powf(p);
            best = best.min(c + go(x, y, p, i + 1, used));
            used[j] = false;
        }
        best
    }
    let total = go(x, y, p, 0, &mut vec![false; y.n()]);
    (total / x.n() as f64).powf(1.0 / p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_form_a_probability_vector(pts in rows(3, 1..40), theta in prop::collection::vec(-4.0..4.0f64, 3)) {
        let m = plugin_measure(&Dataset::from_rows(&pts).unwrap(), &TiltSpec::exponential(theta)).unwrap();
        let s: f64 = m.weights().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(m.weights().iter().all(|w| *w >= 0.0));
        let ess = effective_sample_size(&m);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= pts.len() as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn zero_tilt_gives_uniform_weights(pts in rows(2, 1..50)) {
        let m = plugin_measure(&Dataset::from_rows(&pts).unwrap(), &TiltSpec::exponential(vec![0.0, 0.0])).unwrap();
        let u = 1.0 / pts.len() as f64;
        prop_assert!(m.weights().iter().all(|w| *w == u));
    }

    #[test]
    fn dyadic_shift_leaves_weights_bit_identical(
        ks in prop::collection::vec(-64i32..64, 1..30),
        shift in -16i32..16,
        theta_k in -8i32..8,
    ) {
        // multiples of 1/8 with θ a multiple of 1/4: every θ·x is exact
        let xs: Vec<f64> = ks.iter().map(|k| *k as f64 / 8.0).collect();
        let moved: Vec<f64> = xs.iter().map(|x| x + shift as f64 / 2.0).collect();
        let tilt = TiltSpec::exponential(vec![theta_k as f64 / 4.0]);
        let a = plugin_measure(&Dataset::from_scalars(&xs).unwrap(), &tilt).unwrap();
        let b = plugin_measure(&Dataset::from_scalars(&moved).unwrap(), &tilt).unwrap();
        prop_assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn general_shift_changes_weights_by_rounding_only(xs in scalars(1..30), shift in -10.0..10.0f64, theta in -3.0..3.0f64) {
        let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let tilt = TiltSpec::exponential(vec![theta]);
        let a = plugin_measure(&Dataset::from_scalars(&xs).unwrap(), &tilt).unwrap();
        let b = plugin_measure(&Dataset::from_scalars(&moved).unwrap(), &tilt).unwrap();
        for (u, v) in a.weights().iter().zip(b.weights()) {
            prop_assert!((u - v).abs() <= 1e-12 * u.max(*v) + 1e-300, "{} vs {}", u, v);
        }
    }

    #[test]
    fn wasserstein_metric_axioms(x in scalars(1..20), y in scalars(1..20), z in scalars(1..20), p in 1.0..3.0f64) {
        prop_assert_eq!(w(&x, &x, p), 0.0);
        let xy = w(&x, &y, p);
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - w(&y, &x, p)).abs() <= 1e-12 * xy.max(1.0));
        prop_assert!(xy <= w(&x, &z, p) + w(&z, &y, p) + 1e-9);
    }

    #[test]
    fn wasserstein_scales_linearly(x in scalars(1..20), y in scalars(1..20), a in -4.0..4.0f64, p in 1.0..3.0f64) {
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ay: Vec<f64> = y.iter().map(|v| a * v).collect();
        let lhs = w(&ax, &ay, p);
        let rhs = a.abs() * w(&x, &y, p);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn sliced_equals_exact_on_the_line(x in scalars(1..30), y in scalars(1..30), p in 1.0..3.0f64, seed in any::<u64>()) {
        let dx = Dataset::from_scalars(&x).unwrap();
        let dy = Dataset::from_scalars(&y).unwrap();
        let s = sliced_wp_datasets(&dx, &dy, p, 4, &mut seeded(seed)).unwrap();
        let e = w(&x, &y, p);
        prop_assert!((s - e).abs() <= 1e-12 * e.max(1.0), "{} vs {}", s, e);
    }

    #[test]
    fn exact_small_matches_brute_force(
        (x, y) in (1usize..6, 1usize..4).prop_flat_map(|(n, d)| (rows(d, n..n + 1), rows(d, n..n + 1))),
        p in 1.0..3.0f64,
    ) {
        let dx = Dataset::from_rows(&x).unwrap();
        let dy = Dataset::from_rows(&y).unwrap();
        let got = exact_wp_small(&dx, &dy, p).unwrap();
        let want = brute_force(&dx, &dy, p);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn exact_small_matches_sorting_in_one_dimension(n in 1usize..7, seed in any::<u64>(), p in 1.0..3.0f64) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = exact_wp_small(&Dataset::from_scalars(&x).unwrap(), &Dataset::from_scalars(&y).unwrap(), p).unwrap();
        let want = w(&x, &y, p);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
}
