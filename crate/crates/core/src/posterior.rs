//! Structured Gaussian weight posteriors `N(θ*, H⁻¹)` with
//! `H = Curv/σ² + τI`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curvature::CurvEstimate;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, Cholesky};
use crate::tensor::{unflatten, FlatVector, ParamMask, ParamTree};

thread_local! {
    static INVERSE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of covariance or scale products (applications of `H⁻¹` or its
/// square root) made on the current thread.
pub fn inverse_calls() -> usize {
    INVERSE_CALLS.with(Cell::get)
}

fn count_inverse() {
    INVERSE_CALLS.with(|c| c.set(c.get() + 1));
}

/// Prior precision `τ` and observation noise `σ²` (1 for classification).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub prior_prec: f64,
    pub obs_noise: f64,
}

impl Hyperparams {
    pub fn new(prior_prec: f64, obs_noise: f64) -> Result<Self> {
        let hp = Self { prior_prec, obs_noise };
        hp.validate()?;
        Ok(hp)
    }

    /// Classification hyperparameters: `σ² = 1`.
    pub fn classification(prior_prec: f64) -> Result<Self> {
        Self::new(prior_prec, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_prec > 0.0) || !self.prior_prec.is_finite() {
            return Err(Error::domain(format!("prior precision must be positive, got {}", self.prior_prec)));
        }
        if !(self.obs_noise > 0.0) || !self.obs_noise.is_finite() {
            return Err(Error::domain(format!("observation noise must be positive, got {}", self.obs_noise)));
        }
        Ok(())
    }
}

/// Precomputed factors of `H` for each curvature structure.
#[derive(Debug, Clone)]
pub enum Factors {
    /// Cholesky factor of the dense precision.
    Full(Cholesky),
    /// Diagonal of the precision, `dᵢ = cᵢ/σ² + τ`.
    Diagonal(Vec<f64>),
    /// Eigenvectors `U`, scaled eigenvalues `S/σ²` and
    /// `S̄ᵢ = (Sᵢ/σ² + τ)^{−1/2} − τ^{−1/2}`.
    LowRank { u: DMatrix<f64>, s: Vec<f64>, s_bar: Vec<f64> },
}

/// A Gaussian posterior over the active parameter coordinates.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    hp: Hyperparams,
    dim: usize,
    factors: Factors,
    mask: Option<ParamMask>,
}

/// Builds the posterior from a curvature estimate. The curvature is scaled by
/// `1/σ²` (the inner Hessian of a Gaussian likelihood); classification uses `σ² = 1`.
pub fn posterior_fn(estimate: &CurvEstimate, hp: Hyperparams) -> Result<PosteriorState> {
    hp.validate()?;
    let tau = hp.prior_prec;
    let inv_s2 = 1.0 / hp.obs_noise;
    let dim = estimate.dim();
    let factors = match estimate {
        CurvEstimate::Full { matrix, .. } => {
            if matrix.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("full curvature has non-finite entries"));
            }
            let mut h = matrix * inv_s2;
            for i in 0..dim {
                h[(i, i)] += tau;
            }
            Factors::Full(cholesky_jittered(&h)?)
        }
        CurvEstimate::Diagonal { diag, .. } => {
            let d: Vec<f64> = diag.iter().map(|c| c * inv_s2 + tau).collect();
            if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::numerical(format!("diagonal precision entry {i} = {v:.3e} is not positive")));
            }
            Factors::Diagonal(d)
        }
        CurvEstimate::LowRank(lr) => {
            if lr.s.iter().chain(lr.u.iter()).any(|v| !v.is_finite()) {
                return Err(Error::numerical("low-rank curvature has non-finite entries"));
            }
            let s: Vec<f64> = lr.s.iter().map(|v| v * inv_s2).collect();
            let s_bar = s.iter().map(|si| (si + tau).powf(-0.5) - tau.powf(-0.5)).collect();
            Factors::LowRank { u: lr.u.clone(), s, s_bar }
        }
    };
    Ok(PosteriorState { hp, dim, factors, mask: None })
}

impl PosteriorState {
    pub fn hyperparams(&self) -> Hyperparams {
        self.hp
    }

    /// Dimension of the probabilistic coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factors(&self) -> &Factors {
        &self.factors
    }

    /// Attaches a mask: the posterior then lives on `mask`'s active coordinates
    /// and the rest of the parameter vector is deterministic.
    pub fn with_mask(mut self, mask: ParamMask) -> Result<Self> {
        if mask.dim() != self.dim {
            return Err(Error::dim(format!(
                "mask selects {} coordinates, posterior has {}",
                mask.dim(),
                self.dim
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn mask(&self) -> Option<&ParamMask> {
        self.mask.as_ref()
    }

    /// Length of full parameter vectors this posterior acts on.
    pub fn total_dim(&self) -> usize {
        self.mask.as_ref().map_or(self.dim, ParamMask::total)
    }

    fn check(&self, v: &[f64]) {
        assert_eq!(v.len(), self.dim, "posterior operator applied to vector of wrong length");
    }

    /// `H v`.
    pub fn precision_vp(&self, v: &[f64]) -> FlatVector {
        self.check(v);
        let tau = self.hp.prior_prec;
        match &self.factors {
            Factors::Full(ch) => {
                let ltv = ch.l.tr_mul(&DVector::from_column_slice(v));
                let mut out: Vec<f64> = (&ch.l * ltv).data.into();
                // The factor includes any jitter; remove it so H is exact.
                out.iter_mut().zip(v).for_each(|(o, x)| *o -= ch.jitter * x);
                out
            }
            Factors::Diagonal(d) => d.iter().zip(v).map(|(di, x)| di * x).collect(),
            Factors::LowRank { u, s, .. } => {
                let c = u.tr_mul(&DVector::from_column_slice(v));
                let sc = DVector::from_iterator(c.len(), c.iter().zip(s).map(|(ci, si)| ci * si));
                let mut out: Vec<f64> = (u * sc).data.into();
                out.iter_mut().zip(v).for_each(|(o, x)| *o += tau * x);
                out
            }
        }
    }

    /// `H⁻¹ v`. The low-rank case applies the Woodbury identity in the form
    /// `v/τ + U diag(1/(Sᵢ+τ) − 1/τ) Uᵀv`.
    pub fn cov_vp(&self, v: &[f64]) -> FlatVector {
        self.check(v);
        count_inverse();
        let tau = self.hp.prior_prec;
        match &self.factors {
            Factors::Full(ch) => ch.solve(v),
            Factors::Diagonal(d) => d.iter().zip(v).map(|(di, x)| x / di).collect(),
            Factors::LowRank { u, s, .. } => {
                let c = u.tr_mul(&DVector::from_column_slice(v));
                let w = DVector::from_iterator(
                    c.len(),
                    c.iter().zip(s).map(|(ci, si)| ci * (1.0 / (si + tau) - 1.0 / tau)),
                );
                let mut out: Vec<f64> = (u * w).data.into();
                out.iter_mut().zip(v).for_each(|(o, x)| *o += x / tau);
                out
            }
        }
    }

    /// `L v` with `L Lᵀ = H⁻¹`.
    pub fn scale_vp(&self, v: &[f64]) -> FlatVector {
        self.check(v);
        count_inverse();
        let tau = self.hp.prior_prec;
        match &self.factors {
            Factors::Full(ch) => ch.solve_upper(v),
            Factors::Diagonal(d) => d.iter().zip(v).map(|(di, x)| x / di.sqrt()).collect(),
            Factors::LowRank { u, s_bar, .. } => {
                let c = u.tr_mul(&DVector::from_column_slice(v));
                let w = DVector::from_iterator(c.len(), c.iter().zip(s_bar).map(|(ci, sb)| ci * sb));
                let mut out: Vec<f64> = (u * w).data.into();
                let r = tau.powf(-0.5);
                out.iter_mut().zip(v).for_each(|(o, x)| *o += r * x);
                out
            }
        }
    }

    /// Dense `H⁻¹` (small dimensions only).
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut e = vec![0.0; self.dim];
        for i in 0..self.dim {
            e[i] = 1.0;
            m.column_mut(i).copy_from_slice(&self.cov_vp(&e));
            e[i] = 0.0;
        }
        m
    }

    /// Marginal variances `diag(H⁻¹)`.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let tau = self.hp.prior_prec;
        match &self.factors {
            Factors::Diagonal(d) => d.iter().map(|x| 1.0 / x).collect(),
            Factors::LowRank { u, s, .. } => (0..self.dim)
                .map(|i| {
                    1.0 / tau + (0..s.len()).map(|k| u[(i, k)] * u[(i, k)] * (1.0 / (s[k] + tau) - 1.0 / tau)).sum::<f64>()
                })
                .collect(),
            Factors::Full(_) => self.dense_covariance().diagonal().iter().copied().collect(),
        }
    }

    /// `log|H|`.
    pub fn log_det_precision(&self) -> f64 {
        let tau = self.hp.prior_prec;
        match &self.factors {
            Factors::Full(ch) => ch.log_det(),
            Factors::Diagonal(d) => d.iter().map(|x| x.ln()).sum(),
            Factors::LowRank { s, .. } => {
                self.dim as f64 * tau.ln() + s.iter().map(|si| (si / tau).ln_1p()).sum::<f64>()
            }
        }
    }

    /// Places a vector of active coordinates into the full parameter vector.
    pub fn embed(&self, v: &[f64]) -> FlatVector {
        match &self.mask {
            Some(m) => m.embed(v),
            None => v.to_vec(),
        }
    }

    /// Picks the active coordinates out of a full parameter vector.
    pub fn restrict(&self, v: &[f64]) -> FlatVector {
        match &self.mask {
            Some(m) => m.restrict(v),
            None => v.to_vec(),
        }
    }

    /// `n` draws `θ* + L ε` (embedded through the mask) from a seeded generator.
    pub fn sample(&self, theta_star: &[f64], seed: u64, n: usize) -> Result<Vec<FlatVector>> {
        if n == 0 {
            return Err(Error::domain("sample count must be at least 1"));
        }
        if theta_star.len() != self.total_dim() {
            return Err(Error::dim(format!(
                "θ* has length {}, posterior acts on {}",
                theta_star.len(),
                self.total_dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let eps: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let delta = self.embed(&self.scale_vp(&eps));
                theta_star.iter().zip(&delta).map(|(t, d)| t + d).collect()
            })
            .collect())
    }

    /// [`sample`](Self::sample) returned as parameter trees shaped like `template`.
    pub fn sample_trees(&self, theta_star: &[f64], template: &ParamTree, seed: u64, n: usize) -> Result<Vec<ParamTree>> {
        self.sample(theta_star, seed, n)?.iter().map(|s| unflatten(s, template)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_curvature_gives_isotropic_prior() {
        let est = CurvEstimate::Diagonal { diag: vec![0.0; 3], matvecs: 0 };
        let post = posterior_fn(&est, Hyperparams::new(4.0, 1.0).unwrap()).unwrap();
        assert_eq!(post.cov_vp(&[4.0, 8.0, -4.0]), vec![1.0, 2.0, -1.0]);
        assert_eq!(post.scale_vp(&[1.0, 1.0, 1.0]), vec![0.5; 3]);
        assert_eq!(post.precision_vp(&[1.0, 0.0, 0.0]), vec![4.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        assert!(matches!(Hyperparams::new(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(Hyperparams::new(1.0, -1.0), Err(Error::Domain(_))));
    }
}
