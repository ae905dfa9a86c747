//! Dense feed-forward networks with exact backpropagation.
//!
//! A [`Net`] is a chain of affine layers `y = act(W x + b)`. All parameters
//! live in one flat buffer (per layer: row-major `W` of shape
//! `(out_dim, in_dim)` followed by `b`), so optimizers, checkpoints and
//! finite-difference checks can treat a network as a single vector.
//!
//! The same type serves as the representation encoder, the proxy generator
//! and the triplet discriminator.

mod norm;
mod optim;

pub use norm::{l2_normalize, l2_normalize_backward, l2_normalize_checked, NORM_EPS};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Weight initialization for [`Net::mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    /// Uniform in `±sqrt(6 / fan_in)`, zero biases.
    HeUniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Net {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    /// Bumped on every mutable parameter access; tapes remember it.
    #[serde(skip)]
    version: u64,
}

impl PartialEq for Net {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Post-activation output of every layer.
    outputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprop {
    pub param_grads: Vec<f64>,
    pub input_grad: Vec<f64>,
}

impl Net {
    /// Builds a network from explicit layer shapes and a flat parameter vector.
    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        validate_chain(&layers)?;
        let expected: usize = layers.iter().map(LayerShape::param_count).sum();
        if params.len() != expected {
            return Err(Error::dim("Net::from_parts params", expected, params.len()));
        }
        if let Some(p) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("network parameter {p}")));
        }
        Ok(Self {
            layers,
            params,
            version: 0,
        })
    }

    pub fn zeros(layers: Vec<LayerShape>) -> Result<Self> {
        let n = layers.iter().map(LayerShape::param_count).sum();
        Self::from_parts(layers, vec![0.0; n])
    }

    /// Multi-layer perceptron `input_dim -> widths[0] -> ... -> widths[last]`.
    ///
    /// Every layer but the last uses `hidden`; the last uses `output`.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() { output } else { hidden };
            layers.push(LayerShape::new(prev, w, act));
            prev = w;
        }
        let mut net = Self::zeros(layers)?;
        if init == Init::HeUniform {
            let mut offset = 0;
            for shape in net.layers.clone() {
                let limit = (6.0 / shape.in_dim as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit)
                    .map_err(|e| Error::Config(format!("init range: {e}")))?;
                for w in &mut net.params[offset..offset + shape.in_dim * shape.out_dim] {
                    *w = dist.sample(rng);
                }
                offset += shape.param_count();
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates every outstanding [`Tape`].
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = self.version.wrapping_add(1);
        &mut self.params
    }

    /// `(weights, biases)` of layer `idx`.
    pub fn layer_params(&self, idx: usize) -> (&[f64], &[f64]) {
        let off = self.offset(idx);
        let s = self.layers[idx];
        let w_end = off + s.in_dim * s.out_dim;
        (&self.params[off..w_end], &self.params[w_end..w_end + s.out_dim])
    }

    fn offset(&self, idx: usize) -> usize {
        self.layers[..idx].iter().map(LayerShape::param_count).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("Net::forward input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut offset = 0;
        for s in &self.layers {
            x = affine(s, &self.params[offset..offset + s.param_count()], &x);
            offset += s.param_count();
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let mut offset = 0;
        for s in &self.layers {
            let y = affine(s, &self.params[offset..offset + s.param_count()], &x);
            offset += s.param_count();
            inputs.push(x);
            x = y.clone();
            outputs.push(y);
        }
        Ok((
            x,
            Tape {
                version: self.version,
                inputs,
                outputs,
            },
        ))
    }

    fn check_tape(&self, tape: &Tape, output_grad: &[f64]) -> Result<()> {
        if tape.version != self.version {
            return Err(Error::Usage(
                "tape is stale: parameters changed after the forward pass".into(),
            ));
        }
        let consistent = tape.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(tape.inputs.iter().zip(&tape.outputs))
                .all(|(s, (i, o))| i.len() == s.in_dim && o.len() == s.out_dim);
        if !consistent {
            return Err(Error::Usage("tape was recorded on a different network".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::dim(
                "Net::backward output_grad",
                self.output_dim(),
                output_grad.len(),
            ));
        }
        Ok(())
    }

    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<Backprop> {
        let mut param_grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_accumulate(tape, output_grad, &mut param_grads)?;
        Ok(Backprop {
            param_grads,
            input_grad,
        })
    }

    /// Adds this sample's parameter gradients into `param_grads` and returns
    /// the gradient with respect to the network input.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_tape(tape, output_grad)?;
        if param_grads.len() != self.params.len() {
            return Err(Error::dim(
                "Net::backward param_grads",
                self.params.len(),
                param_grads.len(),
            ));
        }
        Ok(self.backprop(tape, output_grad, Some(param_grads)))
    }

    /// Gradient with respect to the input only; parameters are treated as constants.
    pub fn input_gradient(&self, tape: &Tape, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.check_tape(tape, output_grad)?;
        Ok(self.backprop(tape, output_grad, None))
    }

    fn backprop(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        mut param_grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let mut grad = output_grad.to_vec();
        let mut end = self.params.len();
        for (idx, s) in self.layers.iter().enumerate().rev() {
            let start = end - s.param_count();
            let w_end = start + s.in_dim * s.out_dim;
            let x = &tape.inputs[idx];
            let y = &tape.outputs[idx];
            let delta: Vec<f64> = grad
                .iter()
                .zip(y)
                .map(|(&g, &y)| g * s.activation.derivative_from_output(y))
                .collect();
            if let Some(pg) = param_grads.as_deref_mut() {
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut pg[start + o * s.in_dim..start + (o + 1) * s.in_dim];
                    for (gw, &xi) in row.iter_mut().zip(x) {
                        *gw += d * xi;
                    }
                    pg[w_end + o] += d;
                }
            }
            let weights = &self.params[start..w_end];
            let mut next = vec![0.0; s.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &weights[o * s.in_dim..(o + 1) * s.in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            grad = next;
            end = start;
        }
        grad
    }
}

/// Inner product with four independent accumulators so the reduction pipelines.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn affine(s: &LayerShape, params: &[f64], x: &[f64]) -> Vec<f64> {
    let (weights, bias) = params.split_at(s.in_dim * s.out_dim);
    weights
        .chunks_exact(s.in_dim)
        .zip(bias)
        .map(|(row, &b)| {
            s.activation.apply(b + dot(row, x))
        })
        .collect()
}

fn validate_chain(layers: &[LayerShape]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for s in layers {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
    }
    for pair in layers.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::dim("layer chain", pair[0].out_dim, pair[1].in_dim));
        }
    }
    Ok(())
}
