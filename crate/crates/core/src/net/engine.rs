//! Forward evaluation and reverse/forward-mode differentiation for
//! [`ModelSpec`] networks, one input point at a time.

use super::model::{Activation, ModelSpec, Op};
use super::scalar::Scalar;

/// Activations of every layer boundary: `acts[0]` is the input, `acts[l + 1]`
/// the output of layer `l`.
pub(crate) type Trace<S> = Vec<Vec<S>>;

pub(crate) fn forward_trace<S: Scalar>(ops: &[Op<'_>], params: &[S], x: Vec<S>) -> Trace<S> {
    let mut acts = Vec::with_capacity(ops.len() + 1);
    acts.push(x);
    for op in ops {
        let a = acts.last().expect("trace starts with the input");
        let next = match *op {
            Op::Dense(s) => {
                let mut z = Vec::with_capacity(s.output);
                for o in 0..s.output {
                    let row = &params[s.weight + o * s.input..s.weight + (o + 1) * s.input];
                    let mut acc = match s.bias {
                        Some(b) => params[b + o],
                        None => S::zero(),
                    };
                    for (w, ai) in row.iter().zip(a.iter()) {
                        acc += *w * *ai;
                    }
                    z.push(acc);
                }
                z
            }
            Op::Act(Activation::Tanh) => a.iter().map(|v| v.tanh()).collect(),
            Op::Act(Activation::Relu) => a
                .iter()
                .map(|&v| if v.value() > 0.0 { v } else { S::zero() })
                .collect(),
            Op::Offset(c) => a.iter().zip(c).map(|(&v, &ci)| v + S::constant(ci)).collect(),
        };
        acts.push(next);
    }
    acts
}

/// Accumulates `Jᵀ g` into `grad` given the output cotangent `g`.
pub(crate) fn backward<S: Scalar>(ops: &[Op<'_>], params: &[S], acts: &Trace<S>, mut g: Vec<S>, grad: &mut [S]) {
    for (l, op) in ops.iter().enumerate().rev() {
        let input = &acts[l];
        let need_input_grad = l > 0;
        g = match *op {
            Op::Dense(s) => {
                let mut g_in = if need_input_grad { vec![S::zero(); s.input] } else { Vec::new() };
                for (o, &go) in g.iter().enumerate() {
                    let w0 = s.weight + o * s.input;
                    for i in 0..s.input {
                        grad[w0 + i] += go * input[i];
                    }
                    if let Some(b) = s.bias {
                        grad[b + o] += go;
                    }
                    if need_input_grad {
                        for i in 0..s.input {
                            g_in[i] += params[w0 + i] * go;
                        }
                    }
                }
                g_in
            }
            Op::Act(Activation::Tanh) => {
                let out = &acts[l + 1];
                g.iter()
                    .zip(out)
                    .map(|(&gi, &t)| gi * (S::constant(1.0) - t * t))
                    .collect()
            }
            // Subgradient 0 at the kink.
            Op::Act(Activation::Relu) => g
                .iter()
                .zip(input)
                .map(|(&gi, &z)| if z.value() > 0.0 { gi } else { S::zero() })
                .collect(),
            Op::Offset(_) => g,
        };
        if !need_input_grad {
            break;
        }
    }
}

/// A network linearised at one input point: caches the forward trace so that
/// Jacobian-vector and vector-Jacobian products skip the primal pass.
#[derive(Debug, Clone)]
pub struct Linearization {
    acts: Trace<f64>,
}

impl Linearization {
    pub(crate) fn new(ops: &[Op<'_>], params: &[f64], x: &[f64]) -> Self {
        Self { acts: forward_trace(ops, params, x.to_vec()) }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty trace")
    }

    /// `J v`.
    pub(crate) fn jvp(&self, ops: &[Op<'_>], params: &[f64], v: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = vec![0.0; self.acts[0].len()];
        let mut first = true;
        for (l, op) in ops.iter().enumerate() {
            let a = &self.acts[l];
            t = match *op {
                Op::Dense(s) => {
                    let mut dz = vec![0.0; s.output];
                    for (o, dzo) in dz.iter_mut().enumerate() {
                        let w0 = s.weight + o * s.input;
                        let mut acc = s.bias.map_or(0.0, |b| v[b + o]);
                        let dw = &v[w0..w0 + s.input];
                        for (d, ai) in dw.iter().zip(a.iter()) {
                            acc += d * ai;
                        }
                        if !first {
                            let w = &params[w0..w0 + s.input];
                            for (wi, ti) in w.iter().zip(t.iter()) {
                                acc += wi * ti;
                            }
                        }
                        *dzo = acc;
                    }
                    first = false;
                    dz
                }
                Op::Act(Activation::Tanh) => {
                    let out = &self.acts[l + 1];
                    t.iter().zip(out).map(|(ti, o)| ti * (1.0 - o * o)).collect()
                }
                Op::Act(Activation::Relu) => t
                    .iter()
                    .zip(a)
                    .map(|(&ti, &z)| if z > 0.0 { ti } else { 0.0 })
                    .collect(),
                Op::Offset(_) => t,
            };
        }
        t
    }

    /// Accumulates `Jᵀ u` into `out`.
    pub(crate) fn vjp_into(&self, ops: &[Op<'_>], params: &[f64], u: &[f64], out: &mut [f64]) {
        backward(ops, params, &self.acts, u.to_vec(), out);
    }
}

/// Runs a linearization for `model` at `params`.
pub fn linearize(model: &ModelSpec, params: &[f64], x: &[f64]) -> Linearization {
    Linearization::new(&model.ops(), params, x)
}

impl Linearization {
    pub fn jvp_with(&self, model: &ModelSpec, params: &[f64], v: &[f64]) -> Vec<f64> {
        self.jvp(&model.ops(), params, v)
    }

    pub fn vjp_with(&self, model: &ModelSpec, params: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; params.len()];
        self.vjp_into(&model.ops(), params, u, &mut out);
        out
    }
}
