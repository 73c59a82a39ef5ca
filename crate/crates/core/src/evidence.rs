//! Laplace log marginal likelihood
//! `log p(D) ≈ log p(D, θ*) − ½ log|H / 2π|`.
//!
//! The joint includes the Gaussian likelihood normalizer
//! `−(N·C/2) log(2πσ²)` and the prior normalizer `(P/2) log(τ/2π)`, so both
//! `τ` and `σ²` can be selected by maximizing the evidence.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::curvature::CurvEstimate;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, sym_eig_desc};
use crate::net::{log_softmax, loss_of, predict, prepare_target, Batch, LossKind, ModelSpec};
use crate::posterior::Hyperparams;
use crate::tensor::ParamMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub joint_at_map: f64,
    /// `−½(log|H| − P log 2π)`.
    pub complexity: f64,
    pub lml: f64,
    pub structure: String,
}

/// Data-dependent quantities of the joint that do not depend on `(τ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct JointStats {
    loss: LossKind,
    /// mse: `Σ ½‖f − y‖²`; cross-entropy: `Σ log p(y | f)`.
    data_term: f64,
    /// `N · C` for mse.
    n_out: f64,
    theta_sq: f64,
    p: usize,
}

impl JointStats {
    fn collect(model: &ModelSpec, params: &[f64], data: &[Batch], loss: LossKind) -> Result<Self> {
        if params.len() != model.num_params() {
            return Err(Error::dim(format!(
                "parameter vector has length {}, model has {}",
                params.len(),
                model.num_params()
            )));
        }
        let mut data_term = 0.0;
        let mut n_out = 0.0;
        for b in data {
            let mut partial = 0.0;
            for i in 0..b.len() {
                let f = predict(model, params, b.input(i));
                let t = prepare_target(loss, b.target(i), model.output_dim)?;
                partial += match loss {
                    LossKind::Mse => loss_of(loss, &f, &t),
                    LossKind::CrossEntropy => log_softmax(&f).iter().zip(&t).map(|(l, ti)| l * ti).sum(),
                };
                n_out += model.output_dim as f64;
            }
            data_term += partial;
        }
        Ok(Self { loss, data_term, n_out, theta_sq: params.iter().map(|t| t * t).sum(), p: params.len() })
    }

    fn value(&self, tau: f64, sigma2: f64) -> f64 {
        let prior = -0.5 * tau * self.theta_sq + 0.5 * self.p as f64 * (tau / (2.0 * PI)).ln();
        match self.loss {
            LossKind::Mse => -self.data_term / sigma2 - 0.5 * self.n_out * (2.0 * PI * sigma2).ln() + prior,
            LossKind::CrossEntropy => self.data_term + prior,
        }
    }

    /// `(∂/∂ log τ, ∂/∂ log σ²)`.
    fn gradient(&self, tau: f64, sigma2: f64) -> (f64, f64) {
        let d_tau = -0.5 * tau * self.theta_sq + 0.5 * self.p as f64;
        let d_s2 = match self.loss {
            LossKind::Mse => self.data_term / sigma2 - 0.5 * self.n_out,
            LossKind::CrossEntropy => 0.0,
        };
        (d_tau, d_s2)
    }
}

/// `log p(D | θ*) + log p(θ*)`; for mse the likelihood is Gaussian with
/// variance `σ²`, for cross-entropy categorical (`σ²` unused).
pub fn joint_log_likelihood(model: &ModelSpec, params: &[f64], data: &[Batch], loss: LossKind, hp: Hyperparams) -> Result<f64> {
    hp.validate()?;
    Ok(JointStats::collect(model, params, data, loss)?.value(hp.prior_prec, hp.obs_noise))
}

/// `log|H|` for `H = Curv/σ² + τI`, per structure: Cholesky for full,
/// elementwise for diagonal, the matrix determinant lemma for low rank.
pub fn log_det_precision(estimate: &CurvEstimate, hp: Hyperparams) -> Result<f64> {
    hp.validate()?;
    let tau = hp.prior_prec;
    let inv_s2 = 1.0 / hp.obs_noise;
    let p = estimate.dim() as f64;
    let value = match estimate {
        CurvEstimate::Full { matrix, .. } => {
            let mut h = matrix * inv_s2;
            for i in 0..h.nrows() {
                h[(i, i)] += tau;
            }
            cholesky_jittered(&h)?.log_det()
        }
        CurvEstimate::Diagonal { diag, .. } => diag.iter().map(|c| (c * inv_s2 + tau).ln()).sum(),
        CurvEstimate::LowRank(lr) => p * tau.ln() + lr.s.iter().map(|s| (s * inv_s2 / tau).ln_1p()).sum::<f64>(),
    };
    if !value.is_finite() {
        return Err(Error::numerical(format!("log-determinant of the precision is {value}")));
    }
    Ok(value)
}

/// Combines a joint value with the structure's log-determinant.
pub fn log_marginal_likelihood(estimate: &CurvEstimate, hp: Hyperparams, joint: f64) -> Result<EvidenceReport> {
    let log_det = log_det_precision(estimate, hp)?;
    let p = estimate.dim() as f64;
    let complexity = -0.5 * (log_det - p * (2.0 * PI).ln());
    Ok(EvidenceReport {
        joint_at_map: joint,
        complexity,
        lml: joint + complexity,
        structure: estimate.kind_name().to_string(),
    })
}

/// The evidence as a function of `(log τ, log σ²)` at fixed `θ*` and fixed
/// curvature factors. The curvature spectrum is extracted once, so each
/// evaluation costs `O(P)`.
#[derive(Debug, Clone)]
pub struct LmlObjective {
    stats: JointStats,
    /// Eigenvalues of the unscaled curvature; the remaining `zeros`
    /// directions carry no curvature.
    spectrum: Vec<f64>,
    zeros: usize,
}

/// Builds the evidence objective for `estimate` at `params`.
pub fn lml_objective(estimate: &CurvEstimate, model: &ModelSpec, params: &[f64], data: &[Batch], loss: LossKind) -> Result<LmlObjective> {
    lml_objective_masked(estimate, model, params, data, loss, None)
}

/// [`lml_objective`] for a posterior over the `mask` coordinates only: the
/// prior term covers the active parameters and the rest are held fixed.
pub fn lml_objective_masked(
    estimate: &CurvEstimate,
    model: &ModelSpec,
    params: &[f64],
    data: &[Batch],
    loss: LossKind,
    mask: Option<&ParamMask>,
) -> Result<LmlObjective> {
    let mut stats = JointStats::collect(model, params, data, loss)?;
    let p = estimate.dim();
    if let Some(m) = mask {
        if m.total() != params.len() || m.dim() != p {
            return Err(Error::dim(format!(
                "mask selects {} of {} coordinates; estimate has dimension {p} and θ* length {}",
                m.dim(),
                m.total(),
                params.len()
            )));
        }
        stats.theta_sq = m.restrict(params).iter().map(|t| t * t).sum();
        stats.p = p;
    } else if p != params.len() {
        return Err(Error::dim(format!("estimate has dimension {p}, θ* has length {}", params.len())));
    }
    let (spectrum, zeros) = match estimate {
        CurvEstimate::Full { matrix, .. } => (sym_eig_desc(matrix).0, 0),
        CurvEstimate::Diagonal { diag, .. } => (diag.clone(), 0),
        CurvEstimate::LowRank(lr) => (lr.s.clone(), p - lr.rank()),
    };
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("curvature spectrum has non-finite entries"));
    }
    Ok(LmlObjective { stats, spectrum, zeros })
}

impl LmlObjective {
    pub fn loss(&self) -> LossKind {
        self.stats.loss
    }

    fn unpack(&self, log_tau: f64, log_s2: f64) -> (f64, f64) {
        let s2 = match self.stats.loss {
            LossKind::Mse => log_s2.exp(),
            LossKind::CrossEntropy => 1.0,
        };
        (log_tau.exp(), s2)
    }

    pub fn joint(&self, log_tau: f64, log_s2: f64) -> f64 {
        let (tau, s2) = self.unpack(log_tau, log_s2);
        self.stats.value(tau, s2)
    }

    pub fn log_det(&self, log_tau: f64, log_s2: f64) -> f64 {
        let (tau, s2) = self.unpack(log_tau, log_s2);
        self.zeros as f64 * tau.ln() + self.spectrum.iter().map(|l| (l / s2 + tau).ln()).sum::<f64>()
    }

    /// Evidence at `(τ, σ²) = (e^{log τ}, e^{log σ²})`; `NaN` when the precision is not positive definite.
    pub fn value(&self, log_tau: f64, log_s2: f64) -> f64 {
        let p = (self.spectrum.len() + self.zeros) as f64;
        self.joint(log_tau, log_s2) - 0.5 * (self.log_det(log_tau, log_s2) - p * (2.0 * PI).ln())
    }

    /// Full report at the given hyperparameters.
    pub fn report(&self, hp: Hyperparams, structure: &str) -> EvidenceReport {
        let (lt, ls) = (hp.prior_prec.ln(), hp.obs_noise.ln());
        let joint = self.joint(lt, ls);
        let lml = self.value(lt, ls);
        EvidenceReport { joint_at_map: joint, complexity: lml - joint, lml, structure: structure.to_string() }
    }

    /// Analytic `(∂/∂ log τ, ∂/∂ log σ²)` of [`value`](Self::value).
    pub fn gradient(&self, log_tau: f64, log_s2: f64) -> (f64, f64) {
        let (tau, s2) = self.unpack(log_tau, log_s2);
        let (jt, js) = self.stats.gradient(tau, s2);
        let mut dt = self.zeros as f64;
        let mut ds = 0.0;
        for l in &self.spectrum {
            let h = l / s2 + tau;
            dt += tau / h;
            ds -= (l / s2) / h;
        }
        let ds = match self.stats.loss {
            LossKind::Mse => js - 0.5 * ds,
            LossKind::CrossEntropy => 0.0,
        };
        (jt - 0.5 * dt, ds)
    }
}
