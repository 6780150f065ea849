//! Shared-trunk multi-head classifier.
//!
//! One MLP trunk feeds every classification task: each tree node's binary
//! decision gets its own sigmoid output head on top of the last hidden
//! layer, so the hidden parameters are shared across tasks while the output
//! layers stay task-specific.
//!
//! Everything is implemented directly on flat `f64` parameter vectors:
//! forward, backward, and the optimizer are hand-written so gradients can be
//! verified against finite differences and runs are bitwise reproducible for
//! a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::sigmoid;

/// Head probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` so the
/// chained log-likelihood never produces `-inf`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Architecture and initialization seed for a [`MultiHeadNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_heads: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be at least 1".into()));
        }
        if self.num_heads == 0 {
            return Err(Error::InvalidArgument("num_heads must be at least 1".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "hidden_dims must not be empty".into(),
            ));
        }
        if self.hidden_dims.iter().any(|d| *d == 0) {
            return Err(Error::InvalidArgument(
                "hidden layer widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Offsets of one dense layer inside the flat parameter vector. Weights are
/// row-major `out_dim x in_dim`, followed elsewhere by `out_dim` biases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    in_dim: usize,
    out_dim: usize,
    w_off: usize,
    b_off: usize,
}

/// MLP trunk with one scalar sigmoid head per classification task.
///
/// Mutation happens only through [`Optimizer::step`]; a frozen net is safe
/// to share across threads for concurrent forward passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadNet {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    num_heads: usize,
    activation: Activation,
    /// Trunk layers followed by the head layer.
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Per-layer activations retained from a forward pass for backpropagation.
pub struct ForwardCache {
    /// `activations[0]` is the input; the last entry holds clamped head
    /// probabilities.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn head_probs(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Parameter-shaped gradient accumulator for one mini-batch.
#[derive(Clone, Debug)]
pub struct GradientBuffer {
    grads: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &MultiHeadNet) -> Self {
        Self {
            grads: vec![0.0; net.params.len()],
        }
    }

    pub fn zero(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            *g *= factor;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }
}

impl MultiHeadNet {
    /// Builds a net with Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`)
    /// and zero biases, drawn from a ChaCha stream seeded by `config.seed`.
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.hidden_dims.len() + 1);
        let mut offset = 0usize;
        let mut in_dim = config.input_dim;
        for &out_dim in &config.hidden_dims {
            layers.push(LayerShape {
                in_dim,
                out_dim,
                w_off: offset,
                b_off: offset + in_dim * out_dim,
            });
            offset += in_dim * out_dim + out_dim;
            in_dim = out_dim;
        }
        // Head bank: one scalar output per task, fan_out 1 apiece.
        layers.push(LayerShape {
            in_dim,
            out_dim: config.num_heads,
            w_off: offset,
            b_off: offset + in_dim * config.num_heads,
        });
        offset += in_dim * config.num_heads + config.num_heads;

        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trunk_layers = layers.len() - 1;
        for (li, layer) in layers.iter().enumerate() {
            let fan_out = if li < trunk_layers { layer.out_dim } else { 1 };
            let bound = (6.0 / (layer.in_dim + fan_out) as f64).sqrt();
            for w in &mut params[layer.w_off..layer.w_off + layer.in_dim * layer.out_dim] {
                *w = rng.gen_range(-bound..bound);
            }
        }

        Ok(Self {
            input_dim: config.input_dim,
            hidden_dims: config.hidden_dims.clone(),
            num_heads: config.num_heads,
            activation: config.activation,
            layers,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Hidden-layer widths, used to check that methods under comparison share
    /// the same trunk.
    pub fn trunk_shape(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.input_dim,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector contains a non-finite value".into()));
        }
        Ok(())
    }

    fn affine(&self, layer: &LayerShape, input: &[f64], out: &mut [f64]) {
        for j in 0..layer.out_dim {
            let row = &self.params[layer.w_off + j * layer.in_dim..layer.w_off + (j + 1) * layer.in_dim];
            let mut acc = self.params[layer.b_off + j];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out[j] = acc;
        }
    }

    fn activate(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative of the trunk activation expressed through the activated
    /// output value.
    fn activate_grad(&self, y: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    /// One head probability per task, each clamped into
    /// `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cache(x)?;
        Ok(cache.activations.pop().expect("head outputs"))
    }

    /// Forward pass that keeps per-layer activations for [`Self::backward`].
    pub fn forward_cache(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let trunk_layers = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            self.affine(layer, activations.last().unwrap(), &mut out);
            if li < trunk_layers {
                for v in &mut out {
                    *v = self.activate(*v);
                }
            } else {
                for v in &mut out {
                    *v = sigmoid(*v).clamp(PROB_EPS, 1.0 - PROB_EPS);
                }
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradients of `sum_h upstream[h] * head_h(x)` with respect to every
    /// parameter, computed from a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> GradientBuffer {
        let mut grads = GradientBuffer::zeros_like(self);
        self.accumulate_gradients(cache, upstream, &mut grads);
        grads
    }

    /// Same as [`Self::backward`] but adds into an existing buffer, for
    /// batch accumulation.
    pub fn accumulate_gradients(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut GradientBuffer,
    ) {
        assert_eq!(upstream.len(), self.num_heads, "one upstream value per head");
        let probs = cache.head_probs();
        // Through the sigmoid: d(prob)/d(logit) = p (1 - p).
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(probs)
            .map(|(g, p)| g * p * (1.0 - p))
            .collect();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.activations[li];
            let mut d_input = vec![0.0; layer.in_dim];
            for j in 0..layer.out_dim {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let w_row = layer.w_off + j * layer.in_dim;
                for i in 0..layer.in_dim {
                    grads.grads[w_row + i] += dj * input[i];
                    d_input[i] += dj * self.params[w_row + i];
                }
                grads.grads[layer.b_off + j] += dj;
            }
            if li > 0 {
                let prev_out = &cache.activations[li];
                debug_assert_eq!(prev_out.len(), layer.in_dim);
                delta = d_input
                    .iter()
                    .zip(prev_out)
                    .map(|(d, y)| d * self.activate_grad(*y))
                    .collect();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer hyperparameters. Defaults to Adam with
/// `lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Gradient-descent state; Adam keeps first/second moment estimates.
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, net: &MultiHeadNet) -> Self {
        let n = net.num_params();
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step_count: 0,
        }
    }

    /// Applies one update. Non-finite gradients abort with
    /// [`Error::Diverged`].
    pub fn step(&mut self, net: &mut MultiHeadNet, grads: &GradientBuffer) -> Result<()> {
        let g = grads.as_slice();
        if g.len() != net.params.len() {
            return Err(Error::LengthMismatch {
                left: g.len(),
                right: net.params.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, gi) in net.params.iter_mut().zip(g) {
                    *p -= self.config.learning_rate * gi;
                }
            }
            OptimizerKind::Adam => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let b1 = self.config.beta1;
                let b2 = self.config.beta2;
                let m_corr = 1.0 - b1.powi(t);
                let v_corr = 1.0 - b2.powi(t);
                for i in 0..g.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = self.m[i] / m_corr;
                    let v_hat = self.v[i] / v_corr;
                    net.params[i] -=
                        self.config.learning_rate * m_hat / (v_hat.sqrt() + self.config.epsilon);
                }
            }
        }
        Ok(())
    }
}
