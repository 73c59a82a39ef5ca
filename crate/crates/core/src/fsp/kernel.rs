//! Stationary covariance functions and Gaussian-process priors.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Matern52,
    Periodic,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub variance: f64,
    pub lengthscale: f64,
    /// Period of the periodic kernel; ignored by the others.
    #[serde(default)]
    pub period: Option<f64>,
}

impl KernelSpec {
    pub fn matern52(variance: f64, lengthscale: f64) -> Result<Self> {
        let k = Self { kind: KernelKind::Matern52, variance, lengthscale, period: None };
        k.validate()?;
        Ok(k)
    }

    pub fn rbf(variance: f64, lengthscale: f64) -> Result<Self> {
        let k = Self { kind: KernelKind::Rbf, variance, lengthscale, period: None };
        k.validate()?;
        Ok(k)
    }

    pub fn periodic(variance: f64, lengthscale: f64, period: f64) -> Result<Self> {
        let k = Self { kind: KernelKind::Periodic, variance, lengthscale, period: Some(period) };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.variance) || !pos(self.lengthscale) {
            return Err(Error::domain(format!(
                "kernel variance and lengthscale must be positive, got {} and {}",
                self.variance, self.lengthscale
            )));
        }
        if self.kind == KernelKind::Periodic && !self.period.is_some_and(pos) {
            return Err(Error::domain(format!("periodic kernel needs a positive period, got {:?}", self.period)));
        }
        Ok(())
    }

    /// Covariance at Euclidean distance `r`.
    pub fn at_distance(&self, r: f64) -> f64 {
        let (s2, l) = (self.variance, self.lengthscale);
        match self.kind {
            KernelKind::Matern52 => {
                let a = 5f64.sqrt() * r / l;
                s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            KernelKind::Periodic => {
                let p = self.period.expect("validated periodic kernel");
                let s = (PI * r / p).sin();
                s2 * (-2.0 * s * s / (l * l)).exp()
            }
            KernelKind::Rbf => s2 * (-r * r / (2.0 * l * l)).exp(),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.at_distance(r2.sqrt())
    }
}

/// Gram matrix `k(xᵢ, yⱼ)`.
pub fn kernel_matrix(kernel: &KernelSpec, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), ys.len(), |i, j| kernel.eval(&xs[i], &ys[j]))
}

/// Gaussian-process prior with a constant mean, applied independently to each
/// network output. `nugget` adds white noise to the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPrior {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub nugget: f64,
}

impl GpPrior {
    pub fn new(kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        Ok(Self { kernel, mean: 0.0, nugget: 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.nugget >= 0.0) || !self.nugget.is_finite() || !self.mean.is_finite() {
            return Err(Error::domain(format!("prior needs a finite mean and nugget ≥ 0, got {} and {}", self.mean, self.nugget)));
        }
        Ok(())
    }

    /// Prior covariance `k(xᵢ, xⱼ) + nugget·[i = j]` at one set of points.
    pub fn covariance(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let mut k = kernel_matrix(&self.kernel, xs, xs);
        for i in 0..xs.len() {
            k[(i, i)] += self.nugget;
        }
        k
    }

    /// Prior marginal variance at `x`.
    pub fn variance(&self, x: &[f64]) -> f64 {
        self.kernel.eval(x, x) + self.nugget
    }
}
