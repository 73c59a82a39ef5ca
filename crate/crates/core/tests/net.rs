mod common;

use common::*;
use laplace_core::curvature::hessian_vp;
use laplace_core::net::{grad, jvp, loss_and_grad, predict, vjp, Activation, Batch, LossKind, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Richardson-extrapolated central difference of `f` along `t ↦ f(t)` at 0.
fn richardson(f: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let central = |h: f64| -> Vec<f64> { f(h).iter().zip(f(-h)).map(|(a, b)| (a - b) / (2.0 * h)).collect() };
    let coarse = central(h);
    let fine = central(h / 2.0);
    fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-300)
}

fn shift(theta: &[f64], v: &[f64], t: f64) -> Vec<f64> {
    theta.iter().zip(v).map(|(a, b)| a + t * b).collect()
}

struct Case {
    model: ModelSpec,
    theta: Vec<f64>,
    batch: Batch,
    loss: LossKind,
}

/// Random tanh MLP with at most 500 parameters and a matching batch.
fn random_case(rng: &mut ChaCha8Rng) -> Case {
    loop {
        let input = rng.random_range(1..=3);
        let output = rng.random_range(1..=3);
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=14)).collect();
        let model = ModelSpec::mlp(input, &hidden, output, Activation::Tanh).unwrap();
        if model.num_params() > 500 {
            continue;
        }
        let theta: Vec<f64> = random_vec(rng, model.num_params()).iter().map(|v| 0.8 * v).collect();
        let n = rng.random_range(1..=6);
        let (loss, batch) = if output > 1 && rng.random_bool(0.5) {
            (LossKind::CrossEntropy, class_batches(rng, &[n], input, output).remove(0))
        } else {
            (LossKind::Mse, random_batches(rng, &[n], input, output).remove(0))
        };
        return Case { model, theta, batch, loss };
    }
}

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..20).map(|_| random_case(&mut rng)).collect()
}

#[test]
fn gradient_matches_finite_differences_on_random_mlps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for c in cases() {
        let g = grad(&c.model, &c.theta, &c.batch, c.loss).unwrap();
        for _ in 0..3 {
            let v = random_vec(&mut rng, c.theta.len());
            let fd = richardson(|t| vec![loss_and_grad(&c.model, &shift(&c.theta, &v, t), &c.batch, c.loss).unwrap().0], 1e-3);
            let e = rel_err(&[dot(&g, &v)], &fd);
            assert!(e < 1e-6, "relative error {e} with P = {}", c.theta.len());
        }
    }
}

#[test]
fn jvp_matches_finite_differences_and_vjp_is_its_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for c in cases() {
        let x = c.batch.input(0).to_vec();
        let v = random_vec(&mut rng, c.theta.len());
        let u = random_vec(&mut rng, c.model.output_dim);
        let jv = jvp(&c.model, &c.theta, &x, &v).unwrap();
        let fd = richardson(|t| predict(&c.model, &shift(&c.theta, &v, t), &x), 1e-3);
        assert!(rel_err(&jv, &fd) < 1e-6, "jvp relative error {}", rel_err(&jv, &fd));
        let jtu = vjp(&c.model, &c.theta, &x, &u).unwrap();
        let lhs = dot(&u, &jv);
        let rhs = dot(&jtu, &v);
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "⟨u, Jv⟩ = {lhs}, ⟨Jᵀu, v⟩ = {rhs}");
    }
}

#[test]
fn hvp_matches_finite_differences_of_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in cases() {
        let op = hessian_vp(&c.model, c.loss, std::slice::from_ref(&c.batch), &c.theta).unwrap();
        let v = random_vec(&mut rng, c.theta.len());
        let fd = richardson(|t| grad(&c.model, &shift(&c.theta, &v, t), &c.batch, c.loss).unwrap(), 1e-3);
        let e = rel_err(&op.apply(&v), &fd);
        assert!(e < 1e-4, "relative error {e}");
    }
}

#[test]
fn cases_respect_parameter_budget() {
    assert!(cases().iter().all(|c| c.theta.len() <= 500));
}
