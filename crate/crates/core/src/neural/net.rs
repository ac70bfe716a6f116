//! Small dense networks with explicit parameter storage and a manual
//! backward pass. No autograd, no BLAS: shapes here are tiny (widths of 64)
//! and the transparency is what the tests lean on.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Checkpoint(format!("unknown activation {other:?}"))),
        }
    }
}

/// One affine layer: `out = act(W x + b)` with W stored row-major (out x in).
#[derive(Debug, Clone)]
pub struct Layer {
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || weights.len() != in_dim * out_dim || bias.len() != out_dim
        {
            return Err(Error::DimensionMismatch(format!(
                "layer {in_dim}->{out_dim} with {} weights, {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn forward_into(&self, x: &[f64], pre: &mut Vec<f64>, post: &mut Vec<f64>) {
        pre.clear();
        post.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let z: f64 = self.bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            pre.push(z);
            post.push(self.activation.apply(z));
        }
    }
}

/// Fully connected network with optional parameter clipping.
///
/// When `clip_bound` is set, every weight and bias is kept inside
/// `[-clip_bound, clip_bound]` after construction and after each optimizer
/// step, which bounds the network's Lipschitz constant.
#[derive(Debug, Clone)]
pub struct SmallDenseNetwork {
    layers: Vec<Layer>,
    clip_bound: Option<f64>,
}

impl SmallDenseNetwork {
    /// Random initialization: weights and biases uniform in
    /// `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`, then clipped.
    pub fn random(
        dims: &[usize],
        activations: &[Activation],
        clip_bound: Option<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} dims need {} activations",
                dims.len(),
                dims.len().saturating_sub(1)
            )));
        }
        if let Some(c) = clip_bound {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!("clip bound {c} must be > 0")));
            }
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (l, &act) in activations.iter().enumerate() {
            let (input, output) = (dims[l], dims[l + 1]);
            let scale = 1.0 / (input as f64).sqrt();
            let weights = (0..input * output)
                .map(|_| rng.range_f64(-scale, scale))
                .collect();
            let bias = (0..output).map(|_| rng.range_f64(-scale, scale)).collect();
            layers.push(Layer::new(input, output, weights, bias, act)?);
        }
        let mut net = SmallDenseNetwork::from_layers(layers, clip_bound)?;
        net.clip_params();
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>, clip_bound: Option<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer chain breaks: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(SmallDenseNetwork { layers, clip_bound })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access for custom update rules. Callers changing
    /// parameters under a clip bound should follow up with [`Self::clip_params`].
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn clip_bound(&self) -> Option<f64> {
        self.clip_bound
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn max_abs_param(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |acc, p| acc.max(p.abs()))
    }

    /// Clamp every parameter into the clip interval, if one is set.
    pub fn clip_params(&mut self) {
        let Some(c) = self.clip_bound else { return };
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = p.clamp(-c, c);
            }
        }
    }

    /// Affine + activation composition.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.into_output())
    }

    /// Forward pass retaining per-layer pre-activations and activations for
    /// a later backward pass.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input length {} vs network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current: &[f64] = x;
        for layer in &self.layers {
            let mut p = Vec::new();
            let mut a = Vec::new();
            layer.forward_into(current, &mut p, &mut a);
            pre.push(p);
            post.push(a);
            current = post.last().unwrap();
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Reverse-mode gradients of a scalar loss given its gradient at the
    /// network output. Returns parameter gradients and the gradient at the
    /// input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        loss_gradient_at_output: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        if trace.pre.len() != self.layers.len()
            || trace.input.len() != self.input_dim()
            || trace
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(p, l)| p.len() != l.out_dim)
        {
            return Err(Error::DimensionMismatch(
                "stale forward trace for this network".into(),
            ));
        }
        if loss_gradient_at_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "output gradient length {} vs output dim {}",
                loss_gradient_at_output.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = loss_gradient_at_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            // delta = upstream (.) act'(pre)
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&trace.pre[l])
                .map(|(g, &z)| g * layer.activation.derivative(z))
                .collect();
            let below: &[f64] = if l == 0 {
                &trace.input
            } else {
                &trace.post[l - 1]
            };
            let dw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                grads.bias[l][o] += d;
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &x) in row.iter_mut().zip(below) {
                    *slot += d * x;
                }
            }
            let mut down = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &w) in down.iter_mut().zip(row) {
                    *slot += d * w;
                }
            }
            upstream = down;
        }
        Ok((grads, upstream))
    }
}

/// Cached activations from [`SmallDenseNetwork::forward_trace`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.post.pop().unwrap()
    }
}

/// Per-parameter gradients matching a network's layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &SmallDenseNetwork) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn weight_grads(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn bias_grads(&self, layer: usize) -> &[f64] {
        &self.bias[layer]
    }
}

/// RMSProp with per-parameter second-moment scaling (decay 0.9, eps 1e-8).
///
/// `step` descends along the given loss gradients and re-applies the
/// network's clip bound, so the clipping invariant holds after every update.
#[derive(Debug, Clone)]
pub struct RmsProp {
    cache_w: Vec<Vec<f64>>,
    cache_b: Vec<Vec<f64>>,
    pub learning_rate: f64,
}

const RMS_DECAY: f64 = 0.9;
const RMS_EPS: f64 = 1e-8;

impl RmsProp {
    pub fn new(net: &SmallDenseNetwork, learning_rate: f64) -> Self {
        RmsProp {
            cache_w: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            cache_b: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            learning_rate,
        }
    }

    pub fn step(&mut self, net: &mut SmallDenseNetwork, grads: &Gradients) {
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (i, p) in layer.weights.iter_mut().enumerate() {
                let g = grads.weights[l][i];
                let c = &mut self.cache_w[l][i];
                *c = RMS_DECAY * *c + (1.0 - RMS_DECAY) * g * g;
                *p -= self.learning_rate * g / (c.sqrt() + RMS_EPS);
            }
            for (i, p) in layer.bias.iter_mut().enumerate() {
                let g = grads.bias[l][i];
                let c = &mut self.cache_b[l][i];
                *c = RMS_DECAY * *c + (1.0 - RMS_DECAY) * g * g;
                *p -= self.learning_rate * g / (c.sqrt() + RMS_EPS);
            }
        }
        net.clip_params();
    }
}
