//! Function-space Laplace: training against a Gaussian-process prior through
//! an RKHS penalty at context points, and a low-rank linearised posterior
//! whose marginal variances never exceed the prior's at those points.

mod context;
mod kernel;
mod posterior;
mod train;

pub use context::{radical_inverse, sample_context, ContextSampler, ContextSet, DomainBox};
pub use kernel::{kernel_matrix, GpPrior, KernelKind, KernelSpec};
pub use posterior::{fsp_posterior, FspDiagnostics, FspPosterior, FspPosteriorConfig};
pub use train::{fsp_train, FspTrainConfig, FspTrainOutput};

use crate::error::Result;
use crate::linalg::cholesky_jittered;
use crate::net::{backward, check_lengths, forward_trace, ModelSpec};

/// `½ Σₖ (fₖ(C) − m)ᵀ K(C, C)⁻¹ (fₖ(C) − m)` summed over outputs.
pub fn fsp_regularizer(model: &ModelSpec, params: &[f64], prior: &GpPrior, context: &ContextSet) -> Result<f64> {
    let mut scratch = vec![0.0; params.len()];
    regularizer_and_grad(model, params, prior, &context.points, &mut scratch)
}

/// Adds the regularizer gradient into `grad` and returns its value.
pub(crate) fn regularizer_and_grad(
    model: &ModelSpec,
    params: &[f64],
    prior: &GpPrior,
    points: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<f64> {
    prior.validate()?;
    for x in points {
        check_lengths(model, params, x)?;
    }
    let ops = model.ops();
    let c = model.output_dim;
    let traces: Vec<_> = points.iter().map(|x| forward_trace(&ops, params, x.clone())).collect();
    let ch = cholesky_jittered(&prior.covariance(points))?;
    let mut alpha = vec![vec![0.0; c]; points.len()];
    let mut value = 0.0;
    for k in 0..c {
        let r: Vec<f64> = traces.iter().map(|t| t.last().expect("non-empty")[k] - prior.mean).collect();
        let a = ch.solve(&r);
        value += 0.5 * r.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>();
        for (i, ai) in a.into_iter().enumerate() {
            alpha[i][k] = ai;
        }
    }
    for (t, a) in traces.iter().zip(alpha) {
        backward(&ops, params, t, a, grad);
    }
    Ok(value)
}
