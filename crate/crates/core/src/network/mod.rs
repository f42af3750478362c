//! Fully-connected feedforward classifiers.
//!
//! Each dense layer applies `activation(W x + b)`; the final layer's output
//! is passed through a softmax, which is treated as part of the loss rather
//! than as a layer of its own.

mod adam;
mod backprop;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NusaError, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::Rng;

pub use adam::{adam_step, AdamState};
pub use backprop::{backward, Gradients, LayerGradient};
pub(crate) use backprop::{backward_with_injection, Injection};
pub use train::{accuracy, train, EpochStats, TrainConfig, TrainHistory};

/// Logits are clamped to this magnitude before exponentiation.
const LOGIT_CLAMP: f64 = 500.0;

/// Added inside the log of the cross-entropy.
pub const LOG_EPSILON: f64 = 1e-12;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Activation::Identity => t,
            Activation::Sigmoid => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative at pre-activation `t`.
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = self.apply(t);
                s * (1.0 - s)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NusaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(NusaError::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weights: DenseMatrix,
    pub(crate) bias: Option<DenseVector>,
    pub(crate) activation: Activation,
}

impl DenseLayer {
    pub fn new(
        weights: DenseMatrix,
        bias: Option<DenseVector>,
        activation: Activation,
    ) -> Result<Self> {
        if let Some(b) = &bias {
            if b.dim() != weights.rows() {
                return Err(NusaError::DimensionMismatch {
                    expected: weights.rows(),
                    actual: b.dim(),
                });
            }
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> Option<&DenseVector> {
        self.bias.as_ref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.matvec_slice(x);
        if let Some(b) = &self.bias {
            z.iter_mut()
                .zip(b.as_slice())
                .for_each(|(zi, bi)| *zi += bi);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

/// Per-layer values recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input to each layer: the sample itself, then each hidden activation.
    pub layer_inputs: Vec<DenseVector>,
    pub pre_activations: Vec<DenseVector>,
    /// Softmax class probabilities.
    pub output: DenseVector,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = logits
        .iter()
        .map(|t| t.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
        .collect();
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = clamped.iter().map(|t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn cross_entropy_loss(probs: &DenseVector, label: usize) -> Result<f64> {
    if label >= probs.dim() {
        return Err(NusaError::LabelOutOfRange {
            label,
            num_classes: probs.dim(),
        });
    }
    Ok(-(probs[label] + LOG_EPSILON).ln())
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NusaError::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NusaError::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    actual: pair[1].in_dim(),
                });
            }
        }
        Ok(Network { layers })
    }

    /// Glorot-uniform weights, zero biases. Hidden layers use `hidden_activation`,
    /// the output layer is linear (the softmax follows it).
    pub fn random(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        hidden_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        if dims.contains(&0) {
            return Err(NusaError::invalid(format!(
                "layer widths must be positive, got {dims:?}"
            )));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.uniform(-limit, limit))
                    .collect();
                let activation = if l == last {
                    Activation::Identity
                } else {
                    hidden_activation
                };
                DenseLayer::new(
                    DenseMatrix::new(fan_out, fan_in, w)?,
                    Some(DenseVector::zeros(fan_out)),
                    activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    fn check_input(&self, x: &DenseVector) -> Result<()> {
        if x.dim() != self.input_dim() {
            return Err(NusaError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    pub fn forward_with_trace(&self, x: &DenseVector) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.as_slice().to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&current);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(NusaError::Numeric(format!(
                    "non-finite pre-activation in layer {l}"
                )));
            }
            let a: Vec<f64> = z.iter().map(|&t| layer.activation.apply(t)).collect();
            layer_inputs.push(DenseVector::from_vec_unchecked(std::mem::replace(
                &mut current,
                a,
            )));
            pre_activations.push(DenseVector::from_vec_unchecked(z));
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            output: DenseVector::from_vec_unchecked(softmax(&current)),
        })
    }

    /// Arg-max class (lowest index on ties) and the probability vector.
    pub fn predict(&self, x: &DenseVector) -> Result<(usize, DenseVector)> {
        let trace = self.forward_with_trace(x)?;
        Ok((argmax(trace.output.as_slice()), trace.output))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.as_ref().map_or(0, DenseVector::dim))
            .sum()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            input_dim: self.input_dim(),
            num_classes: self.num_classes(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    weights: l.weights.to_rows(),
                    bias: l.bias.as_ref().map(|b| b.as_slice().to_vec()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(NusaError::invalid(format!(
                "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                let w = DenseMatrix::from_rows(&l.weights)?;
                if (w.rows(), w.cols()) != (l.rows, l.cols) {
                    return Err(NusaError::invalid(format!(
                        "layer declares {}x{} but weights are {}x{}",
                        l.rows,
                        l.cols,
                        w.rows(),
                        w.cols()
                    )));
                }
                let bias = l.bias.clone().map(DenseVector::new).transpose()?;
                DenseLayer::new(w, bias, l.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network::new(layers)?;
        if net.input_dim() != doc.input_dim || net.num_classes() != doc.num_classes {
            return Err(NusaError::invalid(format!(
                "model header says {}->{} but layers give {}->{}",
                doc.input_dim,
                doc.num_classes,
                net.input_dim(),
                net.num_classes()
            )));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Network::from_document(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NusaError::io(path, e))?;
        Network::from_json(&text)
    }
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub input_dim: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}
