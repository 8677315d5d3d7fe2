//! Fully-connected network with sigmoid output heads.
//!
//! Gradients are always requested with respect to the logits; callers that
//! differentiate a loss on the sigmoid outputs apply the `f * (1 - f)` factor
//! themselves (see [`sigmoid_chain`]).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "tnorm-shield-model-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation; ReLU uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::BadArchitecture(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Converts a gradient with respect to sigmoid outputs into one with respect to logits.
pub fn sigmoid_chain(grad_outputs: &[f64], outputs: &[f64]) -> Vec<f64> {
    grad_outputs
        .iter()
        .zip(outputs)
        .map(|(g, f)| g * f * (1.0 - f))
        .collect()
}

/// Dense layer, `weights` row-major with shape `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layer_sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input of every layer; `layer_inputs[0]` is the sample itself.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer; the last entry equals `logits`.
    pub pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.layer_inputs[0]
    }
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.biases.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// All entries in model parameter order (per layer: weights then biases).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for x in &mut layer.weights {
                    *x = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            seed,
            layers,
        })
    }

    /// Builds a model from explicit layers.
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        if let Some(first) = layers.first() {
            sizes.push(first.inputs);
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::BadArchitecture("layer parameter shapes".into()));
            }
            if sizes.last() != Some(&l.inputs) {
                return Err(Error::BadArchitecture("consecutive layer sizes differ".into()));
            }
            sizes.push(l.outputs);
        }
        validate_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            activation,
            seed: 0,
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            let next = if i == last {
                Vec::new()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            layer_inputs.push(std::mem::replace(&mut current, next));
            pre_activations.push(z);
        }
        let logits = pre_activations[last].clone();
        let outputs = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            logits,
            outputs,
        })
    }

    /// Sigmoid outputs only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|t| t.outputs)
    }

    fn check_trace(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<()> {
        let shapes_ok = trace.layer_inputs.len() == self.layers.len()
            && trace.pre_activations.len() == self.layers.len()
            && self.layers.iter().enumerate().all(|(i, l)| {
                trace.layer_inputs[i].len() == l.inputs && trace.pre_activations[i].len() == l.outputs
            });
        if !shapes_ok {
            return Err(Error::TraceMismatch);
        }
        if upstream.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes(),
                actual: upstream.len(),
            });
        }
        Ok(())
    }

    fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        self.check_trace(trace, upstream)?;
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[i];
                let input = &trace.layer_inputs[i];
                for (r, d) in delta.iter().enumerate() {
                    gl.biases[r] += d;
                    let row = &mut gl.weights[r * layer.inputs..(r + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, v)| *w += d * v);
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            if i > 0 {
                for (p, &z) in prev.iter_mut().zip(&trace.pre_activations[i - 1]) {
                    *p *= self.activation.derivative(z);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Gradient of `<upstream, logits>` with respect to every weight and bias.
    pub fn grad_weights(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward(trace, upstream, Some(&mut grads))?;
        Ok(grads)
    }

    /// Like [`Model::grad_weights`], accumulating into `grads`; returns the input gradient.
    pub fn accumulate_grad_weights(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        self.backward(trace, upstream, Some(grads))
    }

    /// Gradient of `<upstream, logits>` with respect to the input.
    pub fn grad_input(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backward(trace, upstream, None)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!(
                "unsupported format {:?}, expected {MODEL_FORMAT:?}",
                file.format
            )));
        }
        let model = file.model;
        let rebuilt = Model::from_layers(model.layers.clone(), model.activation)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        if rebuilt.layer_sizes != model.layer_sizes {
            return Err(Error::ModelFormat("layer_sizes disagree with the weight arrays".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::BadArchitecture(format!(
            "need at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::BadArchitecture(format!("zero-width layer in {sizes:?}")));
    }
    Ok(())
}
