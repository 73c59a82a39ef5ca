//! Approximations to `E[softmax(z)]` for `z ~ N(μ, Σ)`.
//!
//! Every predictive renormalizes its output so the entries sum to one.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_jittered;
use crate::net::softmax;

/// Default mean-field scale `λ₀ = π/8`.
pub const LAMBDA_0: f64 = PI / 8.0;

/// Gaussian over logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGaussian {
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

impl LogitGaussian {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let c = mu.len();
        if c == 0 || sigma.nrows() != c || sigma.ncols() != c {
            return Err(Error::dim(format!(
                "logit covariance is {}×{} for {c} classes",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn diagonal(mu: Vec<f64>, var: &[f64]) -> Result<Self> {
        Self::new(mu, DMatrix::from_diagonal(&DVector::from_column_slice(var)))
    }

    pub fn classes(&self) -> usize {
        self.mu.len()
    }
}

/// Divides by the max before summing so equal entries map to exactly `1/C`.
fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let m = p.iter().copied().fold(0.0, f64::max);
    p.iter_mut().for_each(|x| *x /= m);
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Monte Carlo average of `softmax(z_s)` over `S` seeded draws.
pub fn mc_bridge(lg: &LogitGaussian, s: usize, seed: u64) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::domain("mc_bridge needs at least one sample"));
    }
    let c = lg.classes();
    if lg.sigma.iter().all(|v| *v == 0.0) {
        return Ok(normalize(softmax(&lg.mu)));
    }
    let l = cholesky_jittered(&lg.sigma)?.l;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; c];
    let mut eps = DVector::zeros(c);
    for _ in 0..s {
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
        let z: Vec<f64> = (&l * &eps).iter().zip(&lg.mu).map(|(a, m)| a + m).collect();
        acc.iter_mut().zip(softmax(&z)).for_each(|(a, p)| *a += p);
    }
    Ok(normalize(acc.into_iter().map(|a| a / s as f64).collect()))
}

/// Dirichlet moment matching: with `c = √(C/2) / Σ σ²`, `μ̃ = √c μ` and
/// `σ̃² = c σ²`, returns the normalized
/// `αᵢ ∝ (1/σ̃ᵢ²)(1 − 2/C + e^{μ̃ᵢ} Σ e^{−μ̃ₖ} / C²)`.
/// Zero total variance falls back to `softmax(μ)`.
pub fn laplace_bridge(lg: &LogitGaussian) -> Result<Vec<f64>> {
    let c = lg.classes();
    let var: Vec<f64> = lg.sigma.diagonal().iter().copied().collect();
    let total: f64 = var.iter().sum();
    if total == 0.0 {
        return Ok(normalize(softmax(&lg.mu)));
    }
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::domain("laplace_bridge needs positive logit variances"));
    }
    let cf = c as f64;
    let scale = (cf / 2.0).sqrt() / total;
    let mu_t: Vec<f64> = lg.mu.iter().map(|m| scale.sqrt() * m).collect();
    // Shift by the max for overflow safety; e^{μ̃ᵢ}Σe^{−μ̃ₖ} is shift invariant.
    let shift = mu_t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_neg: f64 = mu_t.iter().map(|m| (shift - m).exp()).sum();
    let alpha: Vec<f64> = mu_t
        .iter()
        .zip(&var)
        .map(|(m, v)| (1.0 - 2.0 / cf + (m - shift).exp() * sum_neg / (cf * cf)) / (scale * v))
        .collect();
    Ok(normalize(alpha))
}

/// `softmax(μᵢ / √(1 + λ₀ Σᵢᵢ))`.
pub fn mean_field_0(lg: &LogitGaussian, lambda0: f64) -> Vec<f64> {
    let z: Vec<f64> = lg
        .mu
        .iter()
        .enumerate()
        .map(|(i, m)| m / (1.0 + lambda0 * lg.sigma[(i, i)]).sqrt())
        .collect();
    normalize(softmax(&z))
}

fn pairwise(lg: &LogitGaussian, lambda0: f64, pooled: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let c = lg.classes();
    let p: Vec<f64> = (0..c)
        .map(|i| {
            let mut denom = 1.0;
            for k in (0..c).filter(|&k| k != i) {
                let v = pooled(i, k).max(0.0);
                denom += ((lg.mu[k] - lg.mu[i]) / (1.0 + lambda0 * v).sqrt()).exp();
            }
            1.0 / denom
        })
        .collect();
    normalize(p)
}

/// Pairwise approximation with pooled variance `Σₖₖ + Σᵢᵢ`.
pub fn mean_field_1(lg: &LogitGaussian, lambda0: f64) -> Vec<f64> {
    pairwise(lg, lambda0, |i, k| lg.sigma[(k, k)] + lg.sigma[(i, i)])
}

/// Pairwise approximation with the logit-difference variance
/// `Σₖₖ + Σᵢᵢ − 2Σᵢₖ` (clamped at 0).
pub fn mean_field_2(lg: &LogitGaussian, lambda0: f64) -> Vec<f64> {
    pairwise(lg, lambda0, |i, k| lg.sigma[(k, k)] + lg.sigma[(i, i)] - 2.0 * lg.sigma[(i, k)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveKind {
    McBridge,
    LaplaceBridge,
    MeanField0,
    MeanField1,
    MeanField2,
}

impl PredictiveKind {
    pub const ALL: [PredictiveKind; 5] = [
        PredictiveKind::McBridge,
        PredictiveKind::LaplaceBridge,
        PredictiveKind::MeanField0,
        PredictiveKind::MeanField1,
        PredictiveKind::MeanField2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictiveKind::McBridge => "mc_bridge",
            PredictiveKind::LaplaceBridge => "laplace_bridge",
            PredictiveKind::MeanField0 => "mean_field_0",
            PredictiveKind::MeanField1 => "mean_field_1",
            PredictiveKind::MeanField2 => "mean_field_2",
        }
    }

    /// Evaluates the predictive; `samples` and `seed` only matter for `mc_bridge`.
    pub fn apply(self, lg: &LogitGaussian, samples: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            PredictiveKind::McBridge => mc_bridge(lg, samples, seed),
            PredictiveKind::LaplaceBridge => laplace_bridge(lg),
            PredictiveKind::MeanField0 => Ok(mean_field_0(lg, LAMBDA_0)),
            PredictiveKind::MeanField1 => Ok(mean_field_1(lg, LAMBDA_0)),
            PredictiveKind::MeanField2 => Ok(mean_field_2(lg, LAMBDA_0)),
        }
    }
}

impl FromStr for PredictiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PredictiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown predictive `{s}`")))
    }
}
