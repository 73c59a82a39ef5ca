mod common;

use common::*;
use laplace_core::curvature::{estimate_full, ggn_vp, CurvEstimate};
use laplace_core::net::{predict, Activation, LossKind, ModelSpec};
use laplace_core::posterior::{posterior_fn, Hyperparams};
use laplace_core::pushforward::{
    ensemble_stats, linear_pushforward, nonlinear_pushforward, nonlinear_pushforward_batch, Ensemble,
};
use laplace_core::tensor::ParamMask;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_posterior(curv: f64, tau: f64, s2: f64) -> laplace_core::posterior::PosteriorState {
    let est = CurvEstimate::Diagonal { diag: vec![curv], matvecs: 1 };
    posterior_fn(&est, Hyperparams::new(tau, s2).unwrap()).unwrap()
}

#[test]
fn linear_model_output_variance_scales_with_input_squared() {
    let post = scalar_posterior(2.0, 0.5, 1.0);
    let v = 1.0 / 2.5;
    for x in [-3.0, 0.0, 0.4, 2.0] {
        let g = linear_pushforward(&linear_model(), &[1.3], &post, &[x]).unwrap();
        assert!((g.mean[0] - 1.3 * x).abs() < 1e-15);
        assert!((g.cov[(0, 0)] - x * x * v).abs() < 1e-14);
    }
}

#[test]
fn toy_output_variance_matches_dense_formula() {
    let model = toy_model();
    let data = toy_data();
    let est = estimate_full(&ggn_vp(&model, LossKind::Mse, &data, &TOY_THETA).unwrap()).unwrap();
    for tau in [0.1, 1.0, 7.0] {
        let post = posterior_fn(&est, Hyperparams::new(tau, 1.0).unwrap()).unwrap();
        let j = toy_jacobian();
        // Only x = 1 is active; its GGN is J Jᵀ.
        let h = DMatrix::from_row_slice(2, 2, &[j[0] * j[0] + tau, j[0] * j[1], j[0] * j[1], j[1] * j[1] + tau]);
        let jv = DVector::from_column_slice(&j);
        let oracle = jv.dot(&(h.try_inverse().unwrap() * &jv));
        let g = linear_pushforward(&model, &TOY_THETA, &post, &[1.0]).unwrap();
        assert!((g.cov[(0, 0)] - oracle).abs() < 1e-10, "tau {tau}: {} vs {oracle}", g.cov[(0, 0)]);
        assert!((g.mean[0] - predict(&model, &TOY_THETA, &[1.0])[0]).abs() < 1e-15);
    }
}

#[test]
fn multi_output_covariance_matches_dense_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let model = ModelSpec::mlp(2, &[4], 3, Activation::Tanh).unwrap();
    let theta = random_vec(&mut rng, model.num_params());
    let p = theta.len();
    let data = random_batches(&mut rng, &[10], 2, 3);
    let est = estimate_full(&ggn_vp(&model, LossKind::Mse, &data, &theta).unwrap()).unwrap();
    let post = posterior_fn(&est, Hyperparams::new(0.7, 0.3).unwrap()).unwrap();
    let x = [0.2, -0.6];
    // Jacobian by central differences.
    let mut jac = DMatrix::zeros(3, p);
    for i in 0..p {
        let (mut a, mut b) = (theta.clone(), theta.clone());
        a[i] += 1e-6;
        b[i] -= 1e-6;
        let (fa, fb) = (predict(&model, &a, &x), predict(&model, &b, &x));
        for k in 0..3 {
            jac[(k, i)] = (fa[k] - fb[k]) / 2e-6;
        }
    }
    let oracle = &jac * post.dense_covariance() * jac.transpose();
    let g = linear_pushforward(&model, &theta, &post, &x).unwrap();
    assert!((&g.cov - &oracle).amax() < 1e-6 * oracle.amax().max(1.0));
    assert_eq!(g.cov, g.cov.transpose());
}

#[test]
fn fully_masked_posterior_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let model = ModelSpec::mlp(1, &[3], 1, Activation::Tanh).unwrap();
    let theta = random_vec(&mut rng, model.num_params());
    let est = CurvEstimate::Diagonal { diag: vec![], matvecs: 0 };
    let post = posterior_fn(&est, Hyperparams::new(1.0, 1.0).unwrap())
        .unwrap()
        .with_mask(ParamMask::none(theta.len()))
        .unwrap();
    let g = linear_pushforward(&model, &theta, &post, &[0.3]).unwrap();
    assert_eq!(g.cov[(0, 0)], 0.0);
    let e = nonlinear_pushforward(&model, &theta, &post, &[0.3], 4, 0).unwrap();
    let f = predict(&model, &theta, &[0.3])[0];
    assert!(e.samples.iter().all(|v| *v == f));
}

#[test]
fn masked_posterior_only_uses_active_jacobian_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let model = ModelSpec::mlp(1, &[3], 1, Activation::Tanh).unwrap();
    let theta = random_vec(&mut rng, model.num_params());
    let p = theta.len();
    let active: Vec<usize> = (p - 4..p).collect();
    let est = CurvEstimate::Diagonal { diag: vec![1.0, 2.0, 3.0, 4.0], matvecs: 4 };
    let post = posterior_fn(&est, Hyperparams::new(0.5, 1.0).unwrap())
        .unwrap()
        .with_mask(ParamMask::from_indices(p, active.clone()).unwrap())
        .unwrap();
    let x = [0.8];
    let mut oracle = 0.0;
    for (k, &i) in active.iter().enumerate() {
        let (mut a, mut b) = (theta.clone(), theta.clone());
        a[i] += 1e-6;
        b[i] -= 1e-6;
        let d = (predict(&model, &a, &x)[0] - predict(&model, &b, &x)[0]) / 2e-6;
        oracle += d * d / ((k + 1) as f64 + 0.5);
    }
    let g = linear_pushforward(&model, &theta, &post, &x).unwrap();
    assert!((g.cov[(0, 0)] - oracle).abs() < 1e-7);
}

#[test]
fn sampled_moments_match_linear_model_gaussian() {
    let post = scalar_posterior(3.0, 1.0, 1.0);
    let x = 1.7;
    let e = nonlinear_pushforward(&linear_model(), &[0.9], &post, &[x], 100_000, 5).unwrap();
    let st = ensemble_stats(&e).unwrap();
    let sd = x * 0.5;
    assert!((st.mean[0] - 0.9 * x).abs() < 0.03 * sd);
    assert!((st.std[0] / sd - 1.0).abs() < 0.03);
}

#[test]
fn ensembles_share_weight_samples_across_inputs() {
    let post = scalar_posterior(1.0, 1.0, 1.0);
    let xs = vec![vec![1.0], vec![2.0]];
    let es = nonlinear_pushforward_batch(&linear_model(), &[0.5], &post, &xs, 50, 3).unwrap();
    for i in 0..50 {
        assert!((es[1].samples[(i, 0)] - 2.0 * es[0].samples[(i, 0)]).abs() < 1e-14);
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let post = scalar_posterior(1.0, 1.0, 1.0);
    let a = nonlinear_pushforward(&linear_model(), &[0.5], &post, &[1.0], 20, 11).unwrap();
    let b = nonlinear_pushforward(&linear_model(), &[0.5], &post, &[1.0], 20, 11).unwrap();
    let c = nonlinear_pushforward(&linear_model(), &[0.5], &post, &[1.0], 20, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
}

#[test]
fn ensemble_stats_two_point_case() {
    let e = Ensemble { samples: DMatrix::from_column_slice(2, 1, &[0.0, 2.0]), seed: 0 };
    let st = ensemble_stats(&e).unwrap();
    assert_eq!(st.mean, vec![1.0]);
    assert_eq!(st.cov[(0, 0)], 2.0);
    assert!((st.std[0] - 2f64.sqrt()).abs() < 1e-15);
    let one = Ensemble { samples: DMatrix::from_column_slice(1, 1, &[0.0]), seed: 0 };
    assert!(ensemble_stats(&one).is_err());
}

#[test]
fn shape_errors() {
    let post = scalar_posterior(1.0, 1.0, 1.0);
    assert!(linear_pushforward(&linear_model(), &[0.5], &post, &[1.0, 2.0]).is_err());
    assert!(nonlinear_pushforward(&linear_model(), &[0.5], &post, &[1.0], 0, 0).is_err());
    let wide = ModelSpec::mlp(1, &[2], 1, Activation::Tanh).unwrap();
    let theta = vec![0.1; wide.num_params()];
    assert!(linear_pushforward(&wide, &theta, &post, &[1.0]).is_err());
}
