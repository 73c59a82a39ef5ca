//! MAP training with Adam on `loss + (τ_train/2)‖θ‖²`.

use std::path::Path;

use laplace_core::net::{loss_and_grad, Activation, Batch, Checkpoint, CheckpointMeta, Layer, ModelSpec};
use laplace_core::optim::Adam;
use laplace_core::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Task};
use crate::data::Dataset;
use crate::error::{CliError, Result};
use crate::output::write_csv;

/// Weights of the two-parameter toy network.
pub const TOY_THETA: [f64; 2] = [1.6556547, 1.0420421];

/// The network for the configured task.
pub fn model_spec(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    let spec = match cfg.data.task {
        Task::ToyRelu => ModelSpec::new(
            1,
            vec![
                Layer::Dense { input: 1, output: 1, bias: false },
                Layer::Offset(vec![-1.0]),
                Layer::Activation(Activation::Relu),
                Layer::Dense { input: 1, output: 1, bias: false },
            ],
        ),
        Task::SineRegression => ModelSpec::mlp(1, &cfg.model.hidden, 1, cfg.model.activation),
        Task::MoonsClassification => ModelSpec::mlp(2, &cfg.model.hidden, 2, cfg.model.activation),
    };
    spec.map_err(|e| CliError::config(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Objective before every update.
    pub trace: Vec<f64>,
}

/// Trains from the seeded initialization. The toy task skips training and
/// returns its fixed weights.
pub fn train_map(cfg: &ExperimentConfig, train: &Dataset) -> Result<TrainOutput> {
    let model = model_spec(cfg)?;
    let loss = cfg.loss();
    let meta = CheckpointMeta { seed: cfg.seed, loss };
    if cfg.data.task == Task::ToyRelu {
        let checkpoint = Checkpoint::new(model, &TOY_THETA, meta)?;
        return Ok(TrainOutput { checkpoint, trace: Vec::new() });
    }
    let tc = &cfg.train;
    let n = train.len();
    let b = tc.batch_size.unwrap_or(n);
    if b == 0 || b > n {
        return Err(CliError::config(format!("train.batch_size {b} must lie in [1, {n}]")));
    }
    let scale = n as f64 / b as f64;
    let mut theta = model.init_params(cfg.seed);
    let mut opt = Adam::new(theta.len(), tc.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::with_capacity(tc.steps);
    let full = train.batch()?;
    for step in 0..tc.steps {
        let batch = if b == n {
            None
        } else {
            if cursor + b > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + b];
            cursor += b;
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| train.inputs[i].clone()).collect();
            let ys: Vec<Vec<f64>> = idx.iter().map(|&i| train.targets[i].clone()).collect();
            Some(Batch::from_rows(&xs, &ys)?)
        };
        let (value, mut grad) = loss_and_grad(&model, &theta, batch.as_ref().unwrap_or(&full), loss)?;
        let sq: f64 = theta.iter().map(|t| t * t).sum();
        let objective = scale * value + 0.5 * tc.prior_prec * sq;
        for (g, t) in grad.iter_mut().zip(&theta) {
            *g = scale * *g + tc.prior_prec * t;
        }
        trace.push(objective);
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss: objective, trace }.into());
        }
        opt.step(&mut theta, &grad);
    }
    Ok(TrainOutput { checkpoint: Checkpoint::new(model, &theta, meta)?, trace })
}

/// Writes `checkpoint.json` and `train_trace.csv` into `dir`.
pub fn save_training(out: &TrainOutput, dir: &Path) -> Result<()> {
    out.checkpoint.save(&dir.join("checkpoint.json"))?;
    let rows: Vec<Vec<f64>> = out.trace.iter().enumerate().map(|(i, v)| vec![i as f64, *v]).collect();
    write_csv(&dir.join("train_trace.csv"), &["step", "objective"], &rows)
}
