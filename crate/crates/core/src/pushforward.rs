//! Weight-space uncertainty mapped to outputs, by linearisation or sampling.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::net::{check_lengths, predict, Linearization, ModelSpec};
use crate::posterior::PosteriorState;

/// Gaussian over network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGaussian {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl OutputGaussian {
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }
}

/// `S` sampled outputs (rows) at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub samples: DMatrix<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// `N(f(x, θ*), J H⁻¹ Jᵀ)` with `J` assembled from one vjp per output.
/// Masked-out parameters contribute no variance.
pub fn linear_pushforward(model: &ModelSpec, params: &[f64], posterior: &PosteriorState, x: &[f64]) -> Result<OutputGaussian> {
    check_lengths(model, params, x)?;
    if posterior.total_dim() != params.len() {
        return Err(Error::dim(format!(
            "posterior acts on {} parameters, model has {}",
            posterior.total_dim(),
            params.len()
        )));
    }
    let ops = model.ops();
    let lin = Linearization::new(&ops, params, x);
    let c = model.output_dim;
    let rows: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            let mut e = vec![0.0; c];
            e[k] = 1.0;
            let mut row = vec![0.0; params.len()];
            lin.vjp_into(&ops, params, &e, &mut row);
            posterior.restrict(&row)
        })
        .collect();
    let mut cov = DMatrix::zeros(c, c);
    for (k, rk) in rows.iter().enumerate() {
        let a = posterior.cov_vp(rk);
        for (l, rl) in rows.iter().enumerate() {
            cov[(l, k)] = rl.iter().zip(&a).map(|(x, y)| x * y).sum();
        }
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(OutputGaussian { mean: lin.output().to_vec(), cov })
}

/// Outputs of `S` posterior weight samples at each input. One set of weight
/// samples is shared by all inputs, so rows are coherent function draws.
pub fn nonlinear_pushforward_batch(
    model: &ModelSpec,
    params: &[f64],
    posterior: &PosteriorState,
    xs: &[Vec<f64>],
    s: usize,
    seed: u64,
) -> Result<Vec<Ensemble>> {
    if s == 0 {
        return Err(Error::domain("ensemble size must be at least 1"));
    }
    for x in xs {
        check_lengths(model, params, x)?;
    }
    let thetas = posterior.sample(params, seed, s)?;
    let c = model.output_dim;
    let mut out: Vec<Ensemble> = xs
        .iter()
        .map(|_| Ensemble { samples: DMatrix::zeros(s, c), seed })
        .collect();
    for (i, theta) in thetas.iter().enumerate() {
        for (e, x) in out.iter_mut().zip(xs) {
            let f = predict(model, theta, x);
            e.samples.row_mut(i).copy_from_slice(&f);
        }
    }
    Ok(out)
}

/// Outputs of `S` posterior weight samples at one input.
pub fn nonlinear_pushforward(
    model: &ModelSpec,
    params: &[f64],
    posterior: &PosteriorState,
    x: &[f64],
    s: usize,
    seed: u64,
) -> Result<Ensemble> {
    let mut v = nonlinear_pushforward_batch(model, params, posterior, &[x.to_vec()], s, seed)?;
    Ok(v.remove(0))
}

/// Mean, standard deviation and unbiased covariance of an ensemble.
pub fn ensemble_stats(e: &Ensemble) -> Result<EnsembleStats> {
    let s = e.samples.nrows();
    if s < 2 {
        return Err(Error::domain(format!("ensemble statistics need at least 2 samples, got {s}")));
    }
    let c = e.samples.ncols();
    let mean: Vec<f64> = (0..c).map(|j| e.samples.column(j).sum() / s as f64).collect();
    let mut centered = e.samples.clone();
    for j in 0..c {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centered.tr_mul(&centered) / (s as f64 - 1.0);
    let std = (0..c).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    Ok(EnsembleStats { mean, std, cov })
}
