use gramlimit::ensemble::DataMatrix;
use gramlimit::matrixops::SymMatrix;
use gramlimit::metrics::{
    kolmogorov_distance, levy_distance, levy_gram_bound, lindeberg_statistic, stieltjes_diff_bound, Cdf, Knot,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Plain empirical CDF, right-continuous.
fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&s| s <= x) as f64 / sorted.len() as f64
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn lattice_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0..200) as f64 / 100.0).collect()
}

/// Lévy distance by bisection on ε with the corridor checked on a fine grid.
fn brute_levy(f: &[f64], g: &[f64], step: f64) -> f64 {
    let (lo, hi) = (-1.5, 3.5);
    let m = ((hi - lo) / step) as usize;
    let fits = |eps: f64| {
        (0..=m).all(|k| {
            let x = lo + k as f64 * step;
            let gx = ecdf(g, x);
            ecdf(f, x - eps) - eps <= gx + 1e-15 && gx <= ecdf(f, x + eps) + eps + 1e-15
        })
    };
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (a + b);
        if fits(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}

#[test]
fn kolmogorov_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (n1, n2) = (rng.gen_range(1..60), rng.gen_range(1..60));
        let (a, b) = (
            sorted(lattice_sample(&mut rng, n1)),
            sorted(lattice_sample(&mut rng, n2)),
        );
        // Lattice points and midpoints cover every constancy interval.
        let brute = (-10..=400)
            .flat_map(|k| [k as f64 / 100.0, (k as f64 + 0.5) / 100.0])
            .map(|x| (ecdf(&a, x) - ecdf(&b, x)).abs())
            .fold(0.0, f64::max);
        let exact = kolmogorov_distance(&Cdf::from_samples(&a).unwrap(), &Cdf::from_samples(&b).unwrap());
        assert!((exact - brute).abs() < 1e-12, "{exact} vs {brute}");
    }
}

#[test]
fn levy_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..6 {
        let (n1, n2) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let (a, b) = (
            sorted(lattice_sample(&mut rng, n1)),
            sorted(lattice_sample(&mut rng, n2)),
        );
        let brute = brute_levy(&a, &b, 1e-5);
        let exact = levy_distance(&Cdf::from_samples(&a).unwrap(), &Cdf::from_samples(&b).unwrap());
        assert!((exact - brute).abs() < 3e-5, "{exact} vs {brute}");
    }
}

#[test]
fn levy_between_point_masses() {
    for a in [0.0, 0.01, 0.3, 0.99, 1.0, 2.5, 40.0] {
        let d = levy_distance(&Cdf::from_samples(&[0.0]).unwrap(), &Cdf::from_samples(&[a]).unwrap());
        assert!((d - f64::min(a, 1.0)).abs() < 1e-12, "a = {a}: {d}");
    }
}

#[test]
fn empirical_normal_within_dkw_band() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let grid: Vec<f64> = (0..=4000).map(|k| -8.0 + 16.0 * k as f64 / 4000.0).collect();
    let knots = grid
        .iter()
        .map(|&x| Knot {
            x,
            left: normal.cdf(x),
            right: normal.cdf(x),
        })
        .collect();
    let limit = Cdf::from_knots(knots).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 20_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let d = kolmogorov_distance(&Cdf::from_samples(&xs).unwrap(), &limit);
    // DKW at confidence 1 − 1e-6.
    let band = ((2.0f64 / 1e-6).ln() / (2.0 * n as f64)).sqrt();
    assert!(d < band, "{d} vs {band}");
    assert!(levy_distance(&Cdf::from_samples(&xs).unwrap(), &limit) <= d + 1e-15);
}

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..30)
}

proptest! {
    #[test]
    fn metric_axioms(a in samples(), b in samples(), c in samples()) {
        let (fa, fb, fc) = (
            Cdf::from_samples(&a).unwrap(),
            Cdf::from_samples(&b).unwrap(),
            Cdf::from_samples(&c).unwrap(),
        );
        for d in [levy_distance, kolmogorov_distance] {
            prop_assert!(d(&fa, &fa).abs() < 1e-12);
            prop_assert!((d(&fa, &fb) - d(&fb, &fa)).abs() < 1e-12);
            // Each distance is accurate to 1e-12, so allow a few of those.
            prop_assert!(d(&fa, &fc) <= d(&fa, &fb) + d(&fb, &fc) + 1e-11);
            prop_assert!((0.0..=1.0).contains(&d(&fa, &fb)));
        }
        prop_assert!(levy_distance(&fa, &fb) <= kolmogorov_distance(&fa, &fb) + 1e-12);
    }
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0))
}

#[test]
fn stieltjes_bound_frobenius_form_never_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut trace_violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let a = random_sym(&mut rng, n, 2.0);
        let b = random_sym(&mut rng, n, 2.0);
        let z = Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(0.05..3.0));
        let r = stieltjes_diff_bound(&a, &b, z).unwrap();
        assert!(r.frobenius.holds(), "{r:?}");
        trace_violations += usize::from(!r.trace.holds());
    }
    // The trace form is strictly weaker and fails on generic inputs.
    assert!(trace_violations > 0);
}

#[test]
fn trace_form_counterexample() {
    let a = SymMatrix::from_lower_fn(2, |i, j| {
        if i != j {
            0.0
        } else if i == 0 {
            1.0
        } else {
            -1.0
        }
    });
    let b = SymMatrix::zeros(2);
    let r = stieltjes_diff_bound(&a, &b, Complex64::new(0.0, 1.0)).unwrap();
    // Tr(A − B) = 0 but the spectra differ.
    assert_eq!(r.trace.rhs, 0.0);
    assert!(r.trace.lhs > 0.1);
    assert!(r.frobenius.holds());
}

#[test]
fn gram_levy_bound_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..1000 {
        let (n, p) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
        let a: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = rng.gen_range(0.0..1.0);
        let b: Vec<f64> = a.iter().map(|v| v + t * rng.gen_range(-1.0..1.0)).collect();
        let r = levy_gram_bound(
            &DataMatrix::from_rows(n, p, a).unwrap(),
            &DataMatrix::from_rows(n, p, b).unwrap(),
        )
        .unwrap();
        assert!(r.holds(), "n={n} p={p}: {r:?}");
    }
}

#[test]
fn lindeberg_oracle_and_trend() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut last = f64::INFINITY;
    for n in [50, 100, 200, 400] {
        let entries: Vec<f64> = (0..n * (n + 1) / 2)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) / (n as f64).sqrt())
            .collect();
        let a = 0.3;
        let brute: f64 = entries.iter().filter(|x| x.abs() > a).map(|x| x * x).sum::<f64>() / (n * n) as f64;
        let l = lindeberg_statistic(&entries, a).unwrap();
        assert!((l - brute).abs() <= 1e-15 * brute.max(1.0));
        assert!(l <= last);
        last = l;
    }
    assert!(lindeberg_statistic(&[1.0, 2.0], 0.1).is_err());
}
