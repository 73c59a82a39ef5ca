use laplace_core::calibration::{
    fd_gradient, gradient_calibrate, grid_search, grid_search_points, Direction, GdConfig, GridSpec, Method,
};
use laplace_core::metrics::{categorical_nll, crps_gaussian, ece, gaussian_nll, mean_crps, mean_gaussian_nll, ECE_BINS};
use laplace_core::posterior::Hyperparams;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{Continuous, Normal};

#[test]
fn crps_standard_normal_at_mean() {
    let v = crps_gaussian(0.0, 1.0, 0.0);
    assert!((v - 0.233_694_977_255_109_13).abs() < 1e-6);
    // (√2 − 1)/√π written out independently.
    assert!((v - (2f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt()).abs() < 1e-15);
}

#[test]
fn crps_matches_monte_carlo_energy_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for (mu, sigma, y) in [(0.0, 1.0, 0.0), (1.0, 0.5, 2.0), (-0.3, 0.8, 0.4)] {
        let n = 1_000_000;
        let d = NormalDist::new(mu, sigma).unwrap();
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = d.sample(&mut rng);
            let x2: f64 = d.sample(&mut rng);
            a += (x - y).abs();
            b += (x - x2).abs();
        }
        let mc = a / n as f64 - 0.5 * b / n as f64;
        assert!((crps_gaussian(mu, sigma, y) - mc).abs() < 1e-3, "{mu} {sigma} {y}");
    }
}

#[test]
fn crps_limits_and_batching() {
    assert_eq!(crps_gaussian(2.0, 0.0, 2.0), 0.0);
    assert_eq!(crps_gaussian(2.0, 0.0, 3.5), 1.5);
    let m = mean_crps(&[0.0, 1.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap();
    assert!((m - crps_gaussian(0.0, 1.0, 0.0)).abs() < 1e-15);
    assert!(mean_crps(&[0.0], &[1.0, 1.0], &[0.0]).is_err());
}

#[test]
fn gaussian_nll_matches_density() {
    assert!((gaussian_nll(0.4, 1.0, 0.4) - 0.918939).abs() < 1e-6);
    for (mu, var, y) in [(0.0, 1.0, 0.5), (2.0, 0.01, 2.3), (-1.0, 9.0, 4.0)] {
        let oracle = -Normal::new(mu, f64::sqrt(var)).unwrap().ln_pdf(y);
        assert!((gaussian_nll(mu, var, y) - oracle).abs() < 1e-6);
    }
    let small = gaussian_nll(0.0, 1e-6, 1.0);
    assert!(small > gaussian_nll(0.0, 1e-3, 1.0) && small > 1e5);
    let m = mean_gaussian_nll(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap();
    assert!((m - 0.5 * (gaussian_nll(0.0, 1.0, 0.0) + gaussian_nll(0.0, 1.0, 1.0))).abs() < 1e-15);
}

#[test]
fn ece_hand_cases() {
    let correct: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    assert_eq!(ece(&correct, &[0, 1, 0], ECE_BINS).unwrap(), 0.0);
    let probs = vec![vec![0.9, 0.1]; 10];
    let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
    assert!((ece(&probs, &labels, ECE_BINS).unwrap() - 0.4).abs() < 1e-15);
}

#[test]
fn ece_two_bin_case() {
    // Bin (0.6, 0.6667]: 2 at 0.65, both right. Bin (0.9333, 1]: 2 at 0.95, one right.
    let probs = vec![vec![0.65, 0.35], vec![0.35, 0.65], vec![0.95, 0.05], vec![0.95, 0.05]];
    let labels = [0, 1, 0, 1];
    let expected = (2.0 * (1.0 - 0.65) + (2.0 * 0.95 - 1.0)) / 4.0;
    assert!((ece(&probs, &labels, ECE_BINS).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn ece_errors() {
    assert!(ece(&[], &[], ECE_BINS).is_err());
    assert!(ece(&[vec![0.5, 0.5]], &[0, 1], ECE_BINS).is_err());
    assert!(ece(&[vec![0.5, 0.5]], &[0], 0).is_err());
}

#[test]
fn categorical_nll_value() {
    let v = categorical_nll(&[vec![0.25, 0.75], vec![0.5, 0.5]], &[1, 0]).unwrap();
    assert!((v - 0.5 * (-(0.75f64.ln()) - 0.5f64.ln())).abs() < 1e-15);
}

#[test]
fn grid_search_finds_peak_on_grid() {
    let res = grid_search(|t| -(t.log10() - 1.0).powi(2), &GridSpec::default(), Direction::Maximize, 1.0, "q").unwrap();
    assert!((res.best.prior_prec - 10.0).abs() < 1e-12);
    assert_eq!(res.method, Method::GridSearch);
    assert_eq!(res.trace.len(), 41);
    let best_in_trace = res.trace.iter().map(|p| p.objective).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(res.best_value, best_in_trace);
}

#[test]
fn grid_search_ties_go_to_smaller_tau() {
    let res = grid_search(|_| 3.0, &GridSpec::default(), Direction::Minimize, 1.0, "c").unwrap();
    assert!((res.best.prior_prec - 1e-5).abs() < 1e-18);
}

#[test]
fn grid_search_skips_and_rejects_non_finite() {
    let res = grid_search(|t| if t > 1.0 { f64::NAN } else { t }, &GridSpec::default(), Direction::Maximize, 1.0, "n").unwrap();
    assert!((res.best.prior_prec - 1.0).abs() < 1e-12);
    assert!(grid_search(|_| f64::INFINITY, &GridSpec::default(), Direction::Maximize, 1.0, "n").is_err());
    let bad = GridSpec { log10_lower: 1.0, log10_upper: 0.0, n: 5 };
    assert!(grid_search(|t| t, &bad, Direction::Maximize, 1.0, "n").is_err());
}

#[test]
fn gradient_descent_converges_on_quadratic_bowl() {
    let (a0, b0) = (0.8, -1.3);
    let bowl = |a: f64, b: f64| (a - a0).powi(2) + 2.0 * (b - b0).powi(2);
    let cfg = GdConfig { steps: 200, lr: 0.1, max_step: None, fix_sigma2: false };
    let res = gradient_calibrate(bowl, (0.0, 0.0), &cfg, Direction::Minimize, None, "bowl").unwrap();
    assert!((res.best.prior_prec.ln() - a0).abs() < 1e-3);
    assert!((res.best.obs_noise.ln() - b0).abs() < 1e-3);
    assert_eq!(res.method, Method::GradientDescent);
    assert!(!res.halted);
    let up = gradient_calibrate(|a, b| -bowl(a, b), (0.0, 0.0), &cfg, Direction::Maximize, None, "bowl").unwrap();
    assert!((up.best.prior_prec.ln() - a0).abs() < 1e-3);
}

#[test]
fn analytic_gradient_is_used_when_given() {
    let f = |a: f64, b: f64| (a - 1.0).powi(2) + b * b;
    let g = |a: f64, b: f64| (2.0 * (a - 1.0), 2.0 * b);
    let cfg = GdConfig { steps: 1, lr: 0.25, ..GdConfig::default() };
    let res = gradient_calibrate(f, (0.0, 2.0), &cfg, Direction::Minimize, Some(&g), "f").unwrap();
    let last = res.trace.last().unwrap();
    assert!((last.tau.ln() - 0.5).abs() < 1e-15 && (last.sigma2.ln() - 1.0).abs() < 1e-15);
}

#[test]
fn zero_gradient_start_returns_init() {
    let cfg = GdConfig::default();
    let res = gradient_calibrate(|a, b| -(a * a + b * b), (0.0, 0.0), &cfg, Direction::Maximize, None, "z").unwrap();
    assert_eq!(res.best, Hyperparams::new(1.0, 1.0).unwrap());
}

#[test]
fn fix_sigma2_and_step_clipping() {
    let cfg = GdConfig { steps: 3, lr: 10.0, max_step: Some(0.5), fix_sigma2: true };
    let res = gradient_calibrate(|a, b| a + b, (0.0, 0.3), &cfg, Direction::Maximize, None, "lin").unwrap();
    for (i, p) in res.trace.iter().enumerate() {
        assert!((p.tau.ln() - 0.5 * i as f64).abs() < 1e-12);
        assert!((p.sigma2.ln() - 0.3).abs() < 1e-15);
    }
}

#[test]
fn non_finite_run_halts_with_best_so_far() {
    let f = |a: f64, _b: f64| if a > 1.2 { f64::NAN } else { a };
    let cfg = GdConfig { steps: 50, lr: 0.5, max_step: None, fix_sigma2: true };
    let res = gradient_calibrate(f, (0.0, 0.0), &cfg, Direction::Maximize, None, "h").unwrap();
    assert!(res.halted);
    assert!((res.best.prior_prec.ln() - 1.0).abs() < 1e-9);
    assert!(gradient_calibrate(|_, _| f64::NAN, (0.0, 0.0), &cfg, Direction::Maximize, None, "h").is_err());
}

#[test]
fn overflowing_hyperparameter_halts() {
    let cfg = GdConfig { steps: 10, lr: 400.0, max_step: None, fix_sigma2: false };
    let res = gradient_calibrate(|_, b| b, (0.0, 0.0), &cfg, Direction::Maximize, None, "o").unwrap();
    assert!(res.halted);
    assert!(res.best.obs_noise.is_finite());
}

#[test]
fn fd_gradient_of_quadratic_is_exact_to_rounding() {
    let (ga, gb) = fd_gradient(&|a, b| 3.0 * a * a - a * b, 0.7, -2.0);
    assert!((ga - (6.0 * 0.7 + 2.0)).abs() < 1e-8);
    assert!((gb + 0.7).abs() < 1e-8);
}

proptest! {
    #[test]
    fn ece_is_permutation_invariant_and_bounded(
        raw in prop::collection::vec((0.0f64..1.0, 0usize..3), 1..60),
        rot in 0usize..60,
    ) {
        let probs: Vec<Vec<f64>> = raw.iter().map(|(p, _)| {
            let top = 1.0 / 3.0 + p * 2.0 / 3.0;
            vec![top, (1.0 - top) / 2.0, (1.0 - top) / 2.0]
        }).collect();
        let labels: Vec<usize> = raw.iter().map(|(_, l)| *l).collect();
        let base = ece(&probs, &labels, ECE_BINS).unwrap();
        let k = rot % probs.len();
        let mut p2 = probs.clone();
        let mut l2 = labels.clone();
        p2.rotate_left(k);
        l2.rotate_left(k);
        p2.reverse();
        l2.reverse();
        let other = ece(&p2, &l2, ECE_BINS).unwrap();
        prop_assert!((base - other).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn grid_search_is_order_invariant(seed in 0u64..1000, center in -4.0f64..4.0) {
        let taus = GridSpec::default().points();
        let mut shuffled = taus.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = |t: f64| -(t.log10() - center).abs();
        let a = grid_search_points(f, &taus, Direction::Maximize, 1.0, "o").unwrap();
        let b = grid_search_points(f, &shuffled, Direction::Maximize, 1.0, "o").unwrap();
        prop_assert_eq!(a.best, b.best);
    }

    #[test]
    fn gradient_calibrate_never_worse_than_init(a0 in -3.0f64..3.0, b0 in -3.0f64..3.0, lr in 0.01f64..5.0) {
        let f = |a: f64, b: f64| (3.0 * a).sin() + (b * b).cos() - 0.1 * a * a;
        let cfg = GdConfig { steps: 20, lr, max_step: None, fix_sigma2: false };
        let res = gradient_calibrate(f, (a0, b0), &cfg, Direction::Maximize, None, "w").unwrap();
        prop_assert!(res.best_value >= f(a0, b0));
    }

    #[test]
    fn crps_and_nll_finite(mu in -10.0f64..10.0, var in 1e-6f64..1e6, y in -10.0f64..10.0) {
        prop_assert!(crps_gaussian(mu, var.sqrt(), y).is_finite());
        prop_assert!(gaussian_nll(mu, var, y).is_finite());
    }
}
