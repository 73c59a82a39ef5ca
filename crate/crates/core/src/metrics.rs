//! Predictive quality metrics.

use std::f64::consts::PI;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Default number of ECE bins.
pub const ECE_BINS: usize = 15;

/// `½ log(2πσ²) + (y − μ)² / (2σ²)`.
pub fn gaussian_nll(mu: f64, var: f64, y: f64) -> f64 {
    0.5 * (2.0 * PI * var).ln() + (y - mu) * (y - mu) / (2.0 * var)
}

/// Mean Gaussian NLL over a dataset.
pub fn mean_gaussian_nll(mu: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    if mu.is_empty() || mu.len() != var.len() || mu.len() != y.len() {
        return Err(Error::dim("gaussian_nll needs equal, non-empty inputs"));
    }
    Ok(mu.iter().zip(var).zip(y).map(|((m, v), t)| gaussian_nll(*m, *v, *t)).sum::<f64>() / mu.len() as f64)
}

/// Closed-form CRPS of `N(μ, σ²)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    if sigma == 0.0 {
        return (y - mu).abs();
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / PI.sqrt())
}

/// Mean CRPS over a dataset.
pub fn mean_crps(mu: &[f64], sigma: &[f64], y: &[f64]) -> Result<f64> {
    if mu.is_empty() || mu.len() != sigma.len() || mu.len() != y.len() {
        return Err(Error::dim("crps needs equal, non-empty inputs"));
    }
    Ok(mu.iter().zip(sigma).zip(y).map(|((m, s), t)| crps_gaussian(*m, *s, *t)).sum::<f64>() / mu.len() as f64)
}

/// Top-label expected calibration error with `n_bins` equal-width bins on
/// `(0, 1]`: bin `b` holds confidences in `(b/n, (b+1)/n]`.
pub fn ece(probs: &[Vec<f64>], labels: &[usize], n_bins: usize) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::domain("ece needs at least one prediction"));
    }
    if probs.len() != labels.len() {
        return Err(Error::dim(format!("{} predictions but {} labels", probs.len(), labels.len())));
    }
    if n_bins == 0 {
        return Err(Error::domain("ece needs at least one bin"));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut correct = vec![0.0; n_bins];
    for (p, &y) in probs.iter().zip(labels) {
        let (arg, &top) = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .ok_or_else(|| Error::dim("empty probability vector"))?;
        let b = ((top * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        conf[b] += top;
        if arg == y {
            correct[b] += 1.0;
        }
    }
    let n = probs.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (correct[b] - conf[b]).abs() / n)
        .sum())
}

/// Mean categorical NLL `−log p[y]`.
pub fn categorical_nll(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::dim("categorical_nll needs equal, non-empty inputs"));
    }
    Ok(probs.iter().zip(labels).map(|(p, &y)| -p[y].ln()).sum::<f64>() / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_at_mean_is_half_log_two_pi() {
        assert!((gaussian_nll(0.3, 1.0, 0.3) - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn crps_degenerate() {
        assert_eq!(crps_gaussian(1.0, 0.0, 1.0), 0.0);
        assert!(crps_gaussian(1.0, 1e-12, 1.0).abs() < 1e-11);
    }
}
