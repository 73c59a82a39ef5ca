//! Minibatch training with the function-space penalty.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{regularizer_and_grad, sample_context, ContextSampler, DomainBox, GpPrior};
use crate::error::{Error, Result};
use crate::net::{backward, forward_trace, loss_grad_output, loss_of, prepare_target, Batch, LossKind, ModelSpec};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::FlatVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FspTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Gaussian noise variance; the mse loss is divided by it.
    pub obs_noise: f64,
    /// Context points drawn per step (ignored by `train_batch`).
    pub n_context: usize,
    pub sampler: ContextSampler,
    pub domain: DomainBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FspTrainOutput {
    pub params: FlatVector,
    /// `(n/b)·NLL + R` at every step, before the update.
    pub objective: Vec<f64>,
}

/// Adam on `(n/b)·NLL(batch) + R(θ; C)` with fresh context points each step.
pub fn fsp_train(
    model: &ModelSpec,
    init: &[f64],
    prior: &GpPrior,
    data: &Batch,
    loss: LossKind,
    cfg: &FspTrainConfig,
    seed: u64,
) -> Result<FspTrainOutput> {
    let n = data.len();
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::domain(format!("batch size {} must lie in [1, {n}]", cfg.batch_size)));
    }
    if init.len() != model.num_params() {
        return Err(Error::dim(format!("init has length {}, model has {}", init.len(), model.num_params())));
    }
    if !(cfg.obs_noise > 0.0) {
        return Err(Error::domain(format!("observation noise must be positive, got {}", cfg.obs_noise)));
    }
    cfg.domain.validate()?;
    let targets: Vec<Vec<f64>> = (0..n)
        .map(|i| prepare_target(loss, data.target(i), model.output_dim))
        .collect::<Result<_>>()?;
    let nll_scale = match loss {
        LossKind::Mse => 1.0 / cfg.obs_noise,
        LossKind::CrossEntropy => 1.0,
    } * n as f64
        / cfg.batch_size as f64;

    let ops = model.ops();
    let mut params = init.to_vec();
    let mut opt = Adam::new(params.len(), cfg.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut grad = vec![0.0; params.len()];

    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut nll = 0.0;
        for &i in idx {
            let t = forward_trace(&ops, &params, data.input(i).to_vec());
            let out = t.last().expect("non-empty");
            nll += loss_of(loss, out, &targets[i]);
            let g: Vec<f64> = loss_grad_output(loss, out, &targets[i]).into_iter().map(|v| v * nll_scale).collect();
            backward(&ops, &params, &t, g, &mut grad);
        }

        let batch_points: Vec<Vec<f64>>;
        let points = match cfg.sampler {
            ContextSampler::TrainBatch => {
                batch_points = idx.iter().map(|&i| data.input(i).to_vec()).collect();
                batch_points
            }
            s => {
                let step_seed = seed.wrapping_mul(cfg.steps as u64).wrapping_add(step as u64);
                sample_context(s, &cfg.domain, cfg.n_context, step_seed, None)?.points
            }
        };
        let reg = regularizer_and_grad(model, &params, prior, &points, &mut grad)?;
        let objective = nll_scale * nll + reg;
        trace.push(objective);
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss: objective, trace });
        }
        opt.step(&mut params, &grad);
    }
    Ok(FspTrainOutput { params, objective: trace })
}
