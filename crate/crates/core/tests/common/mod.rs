#![allow(dead_code)]

use laplace_core::net::{Activation, Batch, Layer, ModelSpec};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOY_THETA: [f64; 2] = [1.6556547, 1.0420421];

/// `f(x) = w₂ · relu(w₁ x − 1)`.
pub fn toy_model() -> ModelSpec {
    ModelSpec::new(
        1,
        vec![
            Layer::Dense { input: 1, output: 1, bias: false },
            Layer::Offset(vec![-1.0]),
            Layer::Activation(Activation::Relu),
            Layer::Dense { input: 1, output: 1, bias: false },
        ],
    )
    .unwrap()
}

pub fn toy_data() -> Vec<Batch> {
    vec![Batch::from_rows(&[vec![1.0], vec![-1.0]], &[vec![0.7], vec![0.0]]).unwrap()]
}

/// Analytic Jacobian at x = 1: `(∂f/∂w₁, ∂f/∂w₂) = (w₂, w₁ − 1)`.
pub fn toy_jacobian() -> [f64; 2] {
    [TOY_THETA[1], TOY_THETA[0] - 1.0]
}

/// `f(x, θ) = θ x`.
pub fn linear_model() -> ModelSpec {
    ModelSpec::new(1, vec![Layer::Dense { input: 1, output: 1, bias: false }]).unwrap()
}

pub fn random_batches(rng: &mut ChaCha8Rng, sizes: &[usize], input: usize, output: usize) -> Vec<Batch> {
    sizes
        .iter()
        .map(|&n| {
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<Vec<f64>> = (0..n).map(|_| (0..output).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            Batch::from_rows(&xs, &ys).unwrap()
        })
        .collect()
}

pub fn class_batches(rng: &mut ChaCha8Rng, sizes: &[usize], input: usize, classes: usize) -> Vec<Batch> {
    sizes
        .iter()
        .map(|&n| {
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0..classes) as f64]).collect();
            Batch::from_rows(&xs, &ys).unwrap()
        })
        .collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// SPD matrix with eigenvalues `spectrum` in a random orthonormal basis.
pub fn spd_with_spectrum(rng: &mut ChaCha8Rng, spectrum: &[f64]) -> DMatrix<f64> {
    let n = spectrum.len();
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spectrum)) * q.transpose()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
