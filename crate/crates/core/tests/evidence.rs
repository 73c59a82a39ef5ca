mod common;

use std::f64::consts::PI;

use common::*;
use laplace_core::calibration::{fd_gradient, grid_search, Direction, GridSpec};
use laplace_core::curvature::{estimate_full, ggn_vp, low_rank_from_full, CurvEstimate};
use laplace_core::evidence::{joint_log_likelihood, lml_objective, log_det_precision, log_marginal_likelihood};
use laplace_core::net::{Activation, Batch, LossKind, ModelSpec};
use laplace_core::posterior::{inverse_calls, Hyperparams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const XS: [f64; 5] = [0.3, -1.1, 0.8, 1.9, -0.4];
const YS: [f64; 5] = [0.5, -2.4, 1.9, 3.6, -0.6];

fn conjugate_batch() -> Batch {
    Batch::from_rows(&XS.map(|x| vec![x]), &YS.map(|y| vec![y])).unwrap()
}

/// Exact `log N(y; 0, σ²I + x xᵀ/τ)` by dense Cholesky.
fn exact_evidence(tau: f64, sigma2: f64) -> f64 {
    let n = XS.len();
    let x = DVector::from_column_slice(&XS);
    let y = DVector::from_column_slice(&YS);
    let k = DMatrix::identity(n, n) * sigma2 + &x * x.transpose() / tau;
    let ch = k.cholesky().unwrap();
    let alpha = ch.solve(&y);
    let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// Posterior mode of θ for the conjugate model.
fn map_theta(tau: f64, sigma2: f64) -> f64 {
    let a: f64 = XS.iter().map(|x| x * x).sum();
    let b: f64 = XS.iter().zip(&YS).map(|(x, y)| x * y).sum();
    b / (a + tau * sigma2)
}

fn laplace_evidence(tau: f64, sigma2: f64) -> f64 {
    let model = linear_model();
    let data = [conjugate_batch()];
    let theta = [map_theta(tau, sigma2)];
    let hp = Hyperparams::new(tau, sigma2).unwrap();
    let est = estimate_full(&ggn_vp(&model, LossKind::Mse, &data, &theta).unwrap()).unwrap();
    let joint = joint_log_likelihood(&model, &theta, &data, LossKind::Mse, hp).unwrap();
    log_marginal_likelihood(&est, hp, joint).unwrap().lml
}

#[test]
fn prior_only_joint() {
    let model = ModelSpec::mlp(2, &[3], 1, Activation::Tanh).unwrap();
    let p = model.num_params();
    let theta = vec![0.0; p];
    let hp = Hyperparams::new(2.5, 1.0).unwrap();
    let j = joint_log_likelihood(&model, &theta, &[], LossKind::Mse, hp).unwrap();
    assert!((j - 0.5 * p as f64 * (2.5 / (2.0 * PI)).ln()).abs() < 1e-12);
}

#[test]
fn exact_fit_joint() {
    let model = linear_model();
    let batch = Batch::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
    let hp = Hyperparams::new(0.5, 1.0).unwrap();
    let j = joint_log_likelihood(&model, &[0.0], &[batch], LossKind::Mse, hp).unwrap();
    let expected = -1.5 * (2.0 * PI).ln() + 0.5 * (0.5 / (2.0 * PI)).ln();
    assert!((j - expected).abs() < 1e-12);
}

#[test]
fn single_datum_joint_matches_gaussian_log_densities() {
    let (x, y, theta, tau, s2) = (0.7, 1.3, 0.4, 3.0, 0.25);
    let batch = Batch::from_rows(&[vec![x]], &[vec![y]]).unwrap();
    let j = joint_log_likelihood(&linear_model(), &[theta], &[batch], LossKind::Mse, Hyperparams::new(tau, s2).unwrap()).unwrap();
    let log_normal = |v: f64, m: f64, var: f64| -0.5 * (2.0 * PI * var).ln() - (v - m) * (v - m) / (2.0 * var);
    let expected = log_normal(y, theta * x, s2) + log_normal(theta, 0.0, 1.0 / tau);
    assert!((j - expected).abs() < 1e-12);
}

#[test]
fn classification_joint_uses_log_softmax() {
    let model = ModelSpec::new(1, vec![laplace_core::net::Layer::Dense { input: 1, output: 2, bias: false }]).unwrap();
    let theta = [1.0, -1.0];
    let batch = Batch::from_rows(&[vec![0.5]], &[vec![0.0]]).unwrap();
    let hp = Hyperparams::classification(1.0).unwrap();
    let j = joint_log_likelihood(&model, &theta, &[batch], LossKind::CrossEntropy, hp).unwrap();
    let log_p0 = 0.5 - (0.5f64.exp() + (-0.5f64).exp()).ln();
    let expected = log_p0 - 0.5 * 2.0 + (1.0 / (2.0 * PI)).ln();
    assert!((j - expected).abs() < 1e-12);
}

#[test]
fn zero_curvature_complexity() {
    let est = CurvEstimate::Diagonal { diag: vec![0.0; 4], matvecs: 4 };
    let hp = Hyperparams::new(3.0, 1.0).unwrap();
    let r = log_marginal_likelihood(&est, hp, -7.0).unwrap();
    let expected = -7.0 - 0.5 * (4.0 * 3f64.ln() - 4.0 * (2.0 * PI).ln());
    assert!((r.lml - expected).abs() < 1e-12);
    assert_eq!(r.lml, r.joint_at_map + r.complexity);
}

#[test]
fn conjugate_linear_regression_matches_closed_form_evidence() {
    for sigma2 in [0.3, 1.0] {
        for i in 0..41 {
            let tau = 10f64.powf(-5.0 + 0.25 * i as f64);
            let lap = laplace_evidence(tau, sigma2);
            let exact = exact_evidence(tau, sigma2);
            assert!((lap - exact).abs() < 1e-8, "tau {tau}: {lap} vs {exact}");
        }
    }
}

#[test]
fn grid_search_recovers_analytic_prior_precision() {
    let sigma2 = 0.3;
    let a: f64 = XS.iter().map(|x| x * x).sum();
    let b: f64 = XS.iter().zip(&YS).map(|(x, y)| x * y).sum();
    assert!(b * b > a * sigma2);
    let tau_star = a * a / (b * b - a * sigma2);
    let res = grid_search(|t| laplace_evidence(t, sigma2), &GridSpec::default(), Direction::Maximize, sigma2, "lml").unwrap();
    let step = 0.25;
    assert!((res.best.prior_prec.log10() - tau_star.log10()).abs() <= step, "{} vs {tau_star}", res.best.prior_prec);
}

#[test]
fn determinant_lemma_matches_dense_cholesky() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for p in [3, 17, 50] {
        let spectrum: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..5.0)).collect();
        let m = spd_with_spectrum(&mut rng, &spectrum);
        for r in [1, p / 2, p] {
            let lr = low_rank_from_full(&m, r.max(1));
            let hp = Hyperparams::new(rng.random_range(0.01..10.0), rng.random_range(0.1..2.0)).unwrap();
            let dense = &lr.u * DMatrix::from_diagonal(&DVector::from_column_slice(&lr.s)) * lr.u.transpose() / hp.obs_noise
                + DMatrix::identity(p, p) * hp.prior_prec;
            let oracle = 2.0 * dense.cholesky().unwrap().l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let got = log_det_precision(&CurvEstimate::LowRank(lr), hp).unwrap();
            assert!((got - oracle).abs() < 1e-8, "p {p} r {r}: {got} vs {oracle}");
        }
    }
}

#[test]
fn structures_agree_on_diagonal_matrix() {
    let d = vec![3.0, 1.0, 0.5, 0.0];
    let m = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
    let hp = Hyperparams::new(0.4, 0.8).unwrap();
    let full = log_det_precision(&CurvEstimate::Full { matrix: m.clone(), matvecs: 4 }, hp).unwrap();
    let diag = log_det_precision(&CurvEstimate::Diagonal { diag: d, matvecs: 4 }, hp).unwrap();
    let lr = log_det_precision(&CurvEstimate::LowRank(low_rank_from_full(&m, 4)), hp).unwrap();
    assert!((full - diag).abs() < 1e-12 && (full - lr).abs() < 1e-12);
}

#[test]
fn lml_decreases_with_log_det() {
    let hp = Hyperparams::new(1.0, 1.0).unwrap();
    let small = CurvEstimate::Diagonal { diag: vec![1.0, 1.0], matvecs: 2 };
    let large = CurvEstimate::Diagonal { diag: vec![5.0, 1.0], matvecs: 2 };
    let a = log_marginal_likelihood(&small, hp, 0.0).unwrap().lml;
    let b = log_marginal_likelihood(&large, hp, 0.0).unwrap().lml;
    assert!(b < a);
}

fn network_setup() -> (ModelSpec, Vec<f64>, Vec<Batch>) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = ModelSpec::mlp(1, &[6], 1, Activation::Tanh).unwrap();
    let theta = random_vec(&mut rng, model.num_params());
    let data = random_batches(&mut rng, &[30], 1, 1);
    (model, theta, data)
}

#[test]
fn objective_matches_direct_evaluation_for_every_structure() {
    let (model, theta, data) = network_setup();
    let op = ggn_vp(&model, LossKind::Mse, &data, &theta).unwrap();
    let full = estimate_full(&op).unwrap();
    let CurvEstimate::Full { matrix, .. } = &full else { unreachable!() };
    let ests = [
        full.clone(),
        laplace_core::curvature::estimate_diagonal(&op),
        CurvEstimate::LowRank(low_rank_from_full(matrix, 5)),
    ];
    for est in &ests {
        let obj = lml_objective(est, &model, &theta, &data, LossKind::Mse).unwrap();
        for (tau, s2) in [(0.01, 0.5), (1.0, 1.0), (30.0, 0.05)] {
            let hp = Hyperparams::new(tau, s2).unwrap();
            let joint = joint_log_likelihood(&model, &theta, &data, LossKind::Mse, hp).unwrap();
            let direct = log_marginal_likelihood(est, hp, joint).unwrap().lml;
            let via = obj.value(tau.ln(), s2.ln());
            assert!((direct - via).abs() < 1e-9 * direct.abs().max(1.0), "{}: {direct} vs {via}", est.kind_name());
        }
    }
}

#[test]
fn objective_is_finite_over_wide_tau_range() {
    let (model, theta, data) = network_setup();
    let est = estimate_full(&ggn_vp(&model, LossKind::Mse, &data, &theta).unwrap()).unwrap();
    let obj = lml_objective(&est, &model, &theta, &data, LossKind::Mse).unwrap();
    for i in 0..=24 {
        let log_tau = (-6.0 + 0.5 * i as f64) * 10f64.ln();
        assert!(obj.value(log_tau, 0.0).is_finite());
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let (model, theta, data) = network_setup();
    let op = ggn_vp(&model, LossKind::Mse, &data, &theta).unwrap();
    let CurvEstimate::Full { matrix, .. } = estimate_full(&op).unwrap() else { unreachable!() };
    let est = CurvEstimate::LowRank(low_rank_from_full(&matrix, 4));
    let obj = lml_objective(&est, &model, &theta, &data, LossKind::Mse).unwrap();
    for (a, b) in [(0.0, 0.0), (-2.0, -1.0), (1.5, 0.7)] {
        let (ga, gb) = obj.gradient(a, b);
        let (fa, fb) = fd_gradient(&|x, y| obj.value(x, y), a, b);
        assert!((ga - fa).abs() < 1e-5 && (gb - fb).abs() < 1e-5, "({ga}, {gb}) vs ({fa}, {fb})");
    }
}

#[test]
fn lml_calibration_never_applies_the_inverse() {
    let (model, theta, data) = network_setup();
    let est = estimate_full(&ggn_vp(&model, LossKind::Mse, &data, &theta).unwrap()).unwrap();
    let before = inverse_calls();
    let obj = lml_objective(&est, &model, &theta, &data, LossKind::Mse).unwrap();
    let res = grid_search(|t| obj.value(t.ln(), 0.0), &GridSpec::default(), Direction::Maximize, 1.0, "lml").unwrap();
    assert!(res.best_value.is_finite());
    assert_eq!(inverse_calls(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn determinant_lemma_property(seed in 0u64..10_000, p in 1usize..=50, r_frac in 0.0f64..1.0, log_tau in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectrum: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..3.0)).collect();
        let m = spd_with_spectrum(&mut rng, &spectrum);
        let r = ((r_frac * p as f64) as usize).clamp(1, p);
        let lr = low_rank_from_full(&m, r);
        let hp = Hyperparams::new(10f64.powf(log_tau), 1.0).unwrap();
        let dense = &lr.u * DMatrix::from_diagonal(&DVector::from_column_slice(&lr.s)) * lr.u.transpose()
            + DMatrix::identity(p, p) * hp.prior_prec;
        let oracle = 2.0 * dense.cholesky().unwrap().l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let got = log_det_precision(&CurvEstimate::LowRank(lr), hp).unwrap();
        prop_assert!((got - oracle).abs() < 1e-8);
    }
}
