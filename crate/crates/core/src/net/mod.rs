//! Minimal differentiation engine for dense feed-forward networks.
//!
//! Supports `Dense`, `relu`, `tanh` and fixed offsets. All arithmetic is `f64`.
//! The squared-error loss is `½‖f − y‖²` per datum, so its output Hessian is
//! the identity; the evidence and posterior modules rely on this convention.

mod checkpoint;
mod engine;
mod model;
mod scalar;

pub use checkpoint::{format_f64, to_json_17, Checkpoint, CheckpointMeta};
pub use engine::{linearize, Linearization};
pub use model::{Activation, Layer, ModelSpec};
pub use scalar::{Dual, Scalar};

pub(crate) use engine::{backward, forward_trace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{flatten, FlatVector, ParamTree, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::domain(format!("unknown loss `{other}`"))),
        }
    }
}

/// Inputs (`N × input_dim`) and targets (`N × target_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl Batch {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        if inputs.shape().len() != 2 || targets.shape().len() != 2 {
            return Err(Error::dim("batch inputs and targets must be rank-2"));
        }
        if inputs.shape()[0] != targets.shape()[0] {
            return Err(Error::dim(format!(
                "batch has {} inputs but {} targets",
                inputs.shape()[0],
                targets.shape()[0]
            )));
        }
        if inputs.shape()[0] == 0 {
            return Err(Error::dim("batch must contain at least one datum"));
        }
        Ok(Self { inputs, targets })
    }

    /// Builds a batch from per-datum rows.
    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        let n = inputs.len();
        let d = inputs.first().map_or(0, Vec::len);
        let t = targets.first().map_or(0, Vec::len);
        if inputs.iter().any(|r| r.len() != d) || targets.iter().any(|r| r.len() != t) {
            return Err(Error::dim("ragged batch rows"));
        }
        Self::new(
            Tensor::matrix(n, d, inputs.concat())?,
            Tensor::matrix(targets.len(), t, targets.concat())?,
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }
}

/// Converts a cross-entropy target (class index or probability vector) into a
/// length-`c` distribution.
pub(crate) fn class_distribution(target: &[f64], c: usize) -> Result<Vec<f64>> {
    if target.len() == 1 && c > 1 {
        let k = target[0];
        if k.fract() != 0.0 || k < 0.0 || k >= c as f64 {
            return Err(Error::domain(format!("class index {k} outside [0, {c})")));
        }
        let mut t = vec![0.0; c];
        t[k as usize] = 1.0;
        Ok(t)
    } else if target.len() == c {
        Ok(target.to_vec())
    } else {
        Err(Error::dim(format!(
            "cross-entropy target has length {}, expected 1 or {c}",
            target.len()
        )))
    }
}

pub fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let m = z.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<S> = z.iter().map(|&v| (v - S::constant(m)).exp()).collect();
    let mut sum = S::zero();
    for &x in &e {
        sum += x;
    }
    e.into_iter().map(|x| x / sum).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Value of the per-datum loss. `target` is already validated.
pub(crate) fn loss_of(kind: LossKind, output: &[f64], target: &[f64]) -> f64 {
    match kind {
        LossKind::Mse => 0.5 * output.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>(),
        LossKind::CrossEntropy => {
            let ls = log_softmax(output);
            -ls.iter().zip(target).map(|(l, t)| t * l).sum::<f64>()
        }
    }
}

/// `∇_f ℓ(f, y)`, generic so that the Hessian-vector product can push tangents through it.
pub(crate) fn loss_grad_output<S: Scalar>(kind: LossKind, output: &[S], target: &[f64]) -> Vec<S> {
    match kind {
        LossKind::Mse => output.iter().zip(target).map(|(&o, &t)| o - S::constant(t)).collect(),
        LossKind::CrossEntropy => {
            let mass: f64 = target.iter().sum();
            softmax(output)
                .into_iter()
                .zip(target)
                .map(|(p, &t)| p.scale(mass) - S::constant(t))
                .collect()
        }
    }
}

/// `Λ u` with `Λ = ∇²_f ℓ` at `output`.
pub(crate) fn loss_hessian_output_vp(kind: LossKind, output: &[f64], target: &[f64], u: &[f64]) -> Vec<f64> {
    match kind {
        LossKind::Mse => u.to_vec(),
        LossKind::CrossEntropy => {
            let mass: f64 = target.iter().sum();
            let p = softmax(output);
            let pu: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
            p.iter().zip(u).map(|(pi, ui)| mass * pi * (ui - pu)).collect()
        }
    }
}

/// Normalizes a per-datum target for `kind` (class indices become one-hot).
pub(crate) fn prepare_target(kind: LossKind, target: &[f64], c: usize) -> Result<Vec<f64>> {
    match kind {
        LossKind::Mse => {
            if target.len() != c {
                return Err(Error::dim(format!("mse target has length {}, output has {c}", target.len())));
            }
            Ok(target.to_vec())
        }
        LossKind::CrossEntropy => class_distribution(target, c),
    }
}

fn input_points(model: &ModelSpec, x: &Tensor) -> Result<(Vec<usize>, usize)> {
    let d = model.input_dim;
    match x.shape() {
        [n] if *n == d => Ok((vec![], 1)),
        [rows, n] if *n == d => Ok((vec![*rows], *rows)),
        shape => {
            let first = model
                .layers
                .iter()
                .position(|l| matches!(l, Layer::Dense { .. }))
                .unwrap_or(0);
            Err(Error::dim(format!(
                "layer {first} expects inputs of width {d}, got tensor of shape {shape:?}"
            )))
        }
    }
}

/// Evaluates the network on a single point (`[input_dim]`) or a batch
/// (`[N, input_dim]`). Output shape is `[C]` or `[N, C]`.
pub fn forward(model: &ModelSpec, params: &ParamTree, x: &Tensor) -> Result<Tensor> {
    model.check_params(params)?;
    let theta = flatten(params);
    let (lead, n) = input_points(model, x)?;
    let ops = model.ops();
    let c = model.output_dim;
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        let xi = &x.data()[i * model.input_dim..(i + 1) * model.input_dim];
        let trace = forward_trace(&ops, &theta, xi.to_vec());
        out.extend_from_slice(trace.last().expect("non-empty"));
    }
    let mut shape = lead;
    shape.push(c);
    Tensor::new(shape, out)
}

/// Single-point forward pass on a flat parameter vector.
pub fn predict(model: &ModelSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut trace = forward_trace(&model.ops(), params, x.to_vec());
    trace.pop().expect("non-empty")
}

/// Per-datum loss: `½‖o − t‖²` for mse, `−log softmax(o)[t]` for cross-entropy.
pub fn loss_value(kind: LossKind, output: &Tensor, target: &Tensor) -> Result<f64> {
    let c = output.len();
    let t = prepare_target(kind, target.data(), c)?;
    Ok(loss_of(kind, output.data(), &t))
}

/// Summed loss over a batch and its gradient.
pub fn loss_and_grad(model: &ModelSpec, params: &[f64], batch: &Batch, kind: LossKind) -> Result<(f64, FlatVector)> {
    if params.len() != model.num_params() {
        return Err(Error::dim(format!(
            "parameter vector has length {}, model has {}",
            params.len(),
            model.num_params()
        )));
    }
    if batch.inputs.shape()[1] != model.input_dim {
        return Err(Error::dim(format!(
            "batch inputs have width {}, model expects {}",
            batch.inputs.shape()[1],
            model.input_dim
        )));
    }
    let ops = model.ops();
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let target = prepare_target(kind, batch.target(i), model.output_dim)?;
        let trace = forward_trace(&ops, params, batch.input(i).to_vec());
        let out = trace.last().expect("non-empty");
        total += loss_of(kind, out, &target);
        let g = loss_grad_output(kind, out, &target);
        backward(&ops, params, &trace, g, &mut grad);
    }
    Ok((total, grad))
}

/// Reverse-mode gradient of the summed per-datum loss.
pub fn grad(model: &ModelSpec, params: &[f64], batch: &Batch, kind: LossKind) -> Result<FlatVector> {
    loss_and_grad(model, params, batch, kind).map(|(_, g)| g)
}

/// Jacobian-vector product `J_θ f(x, θ) · v` at a single input.
pub fn jvp(model: &ModelSpec, params: &[f64], x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_lengths(model, params, x)?;
    if v.len() != params.len() {
        return Err(Error::dim(format!("tangent has length {}, expected {}", v.len(), params.len())));
    }
    let ops = model.ops();
    Ok(Linearization::new(&ops, params, x).jvp(&ops, params, v))
}

/// Vector-Jacobian product `J_θ f(x, θ)ᵀ · u` at a single input.
pub fn vjp(model: &ModelSpec, params: &[f64], x: &[f64], u: &[f64]) -> Result<FlatVector> {
    check_lengths(model, params, x)?;
    if u.len() != model.output_dim {
        return Err(Error::dim(format!("cotangent has length {}, expected {}", u.len(), model.output_dim)));
    }
    let ops = model.ops();
    let mut out = vec![0.0; params.len()];
    Linearization::new(&ops, params, x).vjp_into(&ops, params, u, &mut out);
    Ok(out)
}

/// Dense Jacobian `C × P` at one input, assembled row by row from vjps.
pub fn jacobian(model: &ModelSpec, params: &[f64], x: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_lengths(model, params, x)?;
    let ops = model.ops();
    let lin = Linearization::new(&ops, params, x);
    Ok((0..model.output_dim)
        .map(|k| {
            let mut e = vec![0.0; model.output_dim];
            e[k] = 1.0;
            let mut row = vec![0.0; params.len()];
            lin.vjp_into(&ops, params, &e, &mut row);
            row
        })
        .collect())
}

pub(crate) fn check_lengths(model: &ModelSpec, params: &[f64], x: &[f64]) -> Result<()> {
    if params.len() != model.num_params() {
        return Err(Error::dim(format!(
            "parameter vector has length {}, model has {}",
            params.len(),
            model.num_params()
        )));
    }
    if x.len() != model.input_dim {
        return Err(Error::dim(format!(
            "layer 0 expects inputs of width {}, got {}",
            model.input_dim,
            x.len()
        )));
    }
    Ok(())
}
