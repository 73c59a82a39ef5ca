//! Feed-forward model description and parameter layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamTree, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Affine map `W x + b` with `W` stored row-major as `(output, input)`.
    Dense { input: usize, output: usize, bias: bool },
    Activation(Activation),
    /// Adds a fixed, non-trainable vector.
    Offset(Vec<f64>),
}

/// Where a dense layer's parameters live in the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseSlot {
    pub input: usize,
    pub output: usize,
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Op<'a> {
    Dense(DenseSlot),
    Act(Activation),
    Offset(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let output_dim = match layers.iter().rev().find_map(|l| match l {
            Layer::Dense { output, .. } => Some(*output),
            _ => None,
        }) {
            Some(o) => o,
            None => return Err(Error::domain("model needs at least one dense layer")),
        };
        let spec = Self { input_dim, output_dim, layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense layers of the given widths with `activation` between them.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Layer::Dense { input: width, output: h, bias: true });
            layers.push(Layer::Activation(activation));
            width = h;
        }
        layers.push(Layer::Dense { input: width, output: output_dim, bias: true });
        Self::new(input_dim, layers)
    }

    /// Checks adjacent widths and that the network ends in a dense layer.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::domain("input_dim must be positive"));
        }
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { input, output, .. } => {
                    if *input != width {
                        return Err(Error::dim(format!(
                            "layer {i} (dense {input}->{output}) expects input width {input}, previous width is {width}"
                        )));
                    }
                    if *output == 0 {
                        return Err(Error::dim(format!("layer {i} has zero output width")));
                    }
                    width = *output;
                }
                Layer::Offset(values) if values.len() != width => {
                    return Err(Error::dim(format!(
                        "layer {i} (offset) has {} values, width is {width}",
                        values.len()
                    )));
                }
                _ => {}
            }
        }
        match self.layers.last() {
            Some(Layer::Dense { .. }) => {}
            _ => return Err(Error::domain("last layer must be dense (raw outputs)")),
        }
        if width != self.output_dim {
            return Err(Error::dim(format!(
                "output_dim is {}, final layer width is {width}",
                self.output_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn ops(&self) -> Vec<Op<'_>> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Dense { input, output, bias } => {
                    let weight = offset;
                    offset += input * output;
                    let bias = bias.then(|| {
                        let b = offset;
                        offset += output;
                        b
                    });
                    Op::Dense(DenseSlot { input: *input, output: *output, weight, bias })
                }
                Layer::Activation(a) => Op::Act(*a),
                Layer::Offset(v) => Op::Offset(v),
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { input, output, bias } => input * output + if *bias { *output } else { 0 },
                _ => 0,
            })
            .sum()
    }

    /// Name of the `k`-th dense layer in the parameter tree.
    pub fn dense_name(k: usize) -> String {
        format!("dense_{k}")
    }

    /// Zero-valued parameter tree fixing leaf names, shapes and order.
    pub fn template(&self) -> ParamTree {
        let mut children = Vec::new();
        let mut k = 0;
        for layer in &self.layers {
            if let Layer::Dense { input, output, bias } = layer {
                let mut leaves = vec![("weight".to_string(), ParamTree::Leaf(Tensor::zeros(vec![*output, *input])))];
                if *bias {
                    leaves.push(("bias".to_string(), ParamTree::Leaf(Tensor::zeros(vec![*output]))));
                }
                children.push((Self::dense_name(k), ParamTree::Branch(leaves)));
                k += 1;
            }
        }
        ParamTree::Branch(children)
    }

    /// Path of the last dense layer's subtree (used for last-layer masks).
    pub fn last_layer_path(&self) -> String {
        let n = self.layers.iter().filter(|l| matches!(l, Layer::Dense { .. })).count();
        Self::dense_name(n - 1)
    }

    /// Checks a parameter tree against the template, naming the first mismatch.
    pub fn check_params(&self, params: &ParamTree) -> Result<()> {
        let expected = self.template().leaves().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect::<Vec<_>>();
        let got = params.leaves();
        if got.len() != expected.len() {
            return Err(Error::dim(format!(
                "parameter tree has {} leaves, model expects {}",
                got.len(),
                expected.len()
            )));
        }
        for ((name, shape), (gname, t)) in expected.iter().zip(got.iter()) {
            if name != gname || shape.as_slice() != t.shape() {
                return Err(Error::dim(format!(
                    "leaf `{gname}` with shape {:?} does not match model leaf `{name}` with shape {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Seeded Glorot-uniform weights and zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.num_params()];
        for op in self.ops() {
            if let Op::Dense(s) = op {
                let limit = (6.0 / (s.input + s.output) as f64).sqrt();
                for w in &mut theta[s.weight..s.weight + s.input * s.output] {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        theta
    }
}
