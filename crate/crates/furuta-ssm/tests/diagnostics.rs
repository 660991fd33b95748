use furuta_ssm::diagnostics::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{LN_2, PI};

fn logistic(n: usize) -> Vec<f64> {
    let mut x = 0.3;
    (0..n)
        .map(|_| {
            x = 4.0 * x * (1.0 - x);
            x
        })
        .collect()
}

#[test]
fn circle_has_dimension_one() {
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let angles: Vec<f64> = (0..n).map(|_| 2.0 * PI * rng.gen::<f64>()).collect();
    let pts = DMatrix::from_fn(n, 2, |i, j| if j == 0 { angles[i].cos() } else { angles[i].sin() });
    let est = correlation_dimension(&pts, 0).unwrap();
    assert!((est.dimension - 1.0).abs() < 0.05, "{est:?}");
    assert!(est.reliable);
    assert!(est.corr_sum.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn square_has_dimension_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts = DMatrix::from_fn(5000, 2, |_, _| rng.gen::<f64>());
    let est = correlation_dimension(&pts, 0).unwrap();
    assert!((est.dimension - 2.0).abs() < 0.1, "{} on [{}, {}]", est.dimension, est.eps_lo, est.eps_hi);
}

#[test]
fn small_point_sets_are_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = DMatrix::from_fn(500, 2, |_, _| rng.gen::<f64>());
    assert!(correlation_dimension(&pts, 0).unwrap().warning.is_some());
}

#[test]
fn logistic_map_benettin() {
    let e = lyapunov_map(|x| vec![4.0 * x[0] * (1.0 - x[0])], &[0.3], 100_000, 100, 1.0, 10.0).unwrap();
    assert!((e.per_step - LN_2).abs() < 0.02 * LN_2, "{}", e.per_step);
}

#[test]
fn logistic_map_rosenstein() {
    let s = logistic(20_000);
    let pts = DMatrix::from_fn(s.len() - 1, 2, |i, j| s[i + j]);
    let opts = RosensteinOptions { theiler: 10, k_max: 12, fit: (0, 6) };
    let e = lyapunov_data(&pts, 1.0, &opts).unwrap();
    assert!((e.per_step - LN_2).abs() < 0.05 * LN_2, "{}", e.per_step);
}

#[test]
fn periodic_signal_has_zero_exponent() {
    let s: Vec<f64> = (0..20_000).map(|k| (2.0 * PI * k as f64 / 97.3).sin()).collect();
    let pts = DMatrix::from_fn(s.len() - 30, 4, |i, j| s[i + 10 * j]);
    let opts = RosensteinOptions { theiler: 100, k_max: 200, fit: (0, 100) };
    let e = lyapunov_data(&pts, 1.0, &opts).unwrap();
    assert!(e.per_step.abs() < 0.01, "{}", e.per_step);
}

#[test]
fn unbounded_map_is_reported() {
    let r = lyapunov_map(|x| vec![2.0 * x[0]], &[1.0], 1000, 0, 1.0, 1e6);
    assert_eq!(r.unwrap_err(), furuta_ssm::Error::Unbounded);
}

#[test]
fn shifted_distributions_have_positive_ks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = DMatrix::from_fn(4000, 1, |_, _| rng.gen::<f64>() - 0.5);
    let b = a.map(|v| v + 0.2);
    let (ha, hb, ks) = compare_pdfs(&a, &b, 40).unwrap();
    assert!((ha[0].mass() - 1.0).abs() < 1e-12 && (hb[0].mass() - 1.0).abs() < 1e-12);
    assert!((ks[0] - 0.2).abs() < 0.05, "{}", ks[0]);
}

#[test]
fn spectrum_of_a_sine_peaks_at_its_frequency() {
    let dt = 0.0315;
    let f0 = 0.53;
    let n = (200.0 / dt) as usize;
    let s: Vec<f64> = (0..n).map(|k| (2.0 * PI * f0 * k as f64 * dt).sin()).collect();
    let sp = fft_spectrum(&s, dt).unwrap();
    let p = spectral_peaks(&sp, 3, 0.05, 2);
    assert_eq!(p.len(), 1);
    assert!((p[0].freq - f0).abs() <= 1.0 / (n as f64 * dt));
    assert!((p[0].amp - 1.0).abs() < 0.2);
}

fn brute_force_dtw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    fn go(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let c = (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum::<f64>().sqrt();
        if i + 1 == a.nrows() && j + 1 == b.nrows() {
            return c;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.nrows() {
            best = best.min(go(a, b, i + 1, j));
        }
        if j + 1 < b.nrows() {
            best = best.min(go(a, b, i, j + 1));
        }
        if i + 1 < a.nrows() && j + 1 < b.nrows() {
            best = best.min(go(a, b, i + 1, j + 1));
        }
        c + best
    }
    go(a, b, 0, 0)
}

fn compress(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for i in 0..a.nrows() {
        let r: Vec<f64> = a.row(i).iter().cloned().collect();
        if out.last() != Some(&r) {
            out.push(r);
        }
    }
    out
}

fn seq(len: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3i32..=3, len).prop_map(move |v| DMatrix::from_fn(v.len(), 1, |i, _| v[i] as f64))
}

proptest! {
    #[test]
    fn dtw_matches_exhaustive_search(a in (1usize..=6).prop_flat_map(seq), b in (1usize..=6).prop_flat_map(seq)) {
        let (cost, path) = dtw(&a, &b).unwrap();
        prop_assert!((cost - brute_force_dtw(&a, &b)).abs() < 1e-9);
        prop_assert_eq!(path[0], (0, 0));
        prop_assert_eq!(*path.last().unwrap(), (a.nrows() - 1, b.nrows() - 1));
        let (back, _) = dtw(&b, &a).unwrap();
        prop_assert!((cost - back).abs() < 1e-9);
        if cost == 0.0 {
            prop_assert_eq!(compress(&a), compress(&b));
        }
    }

    #[test]
    fn correlation_sum_is_monotone(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = DMatrix::from_fn(300, 3, |_, _| rng.gen::<f64>());
        let est = correlation_dimension(&pts, 0).unwrap();
        prop_assert!(est.corr_sum.windows(2).all(|w| w[1] >= w[0]));
    }
}
