//! Fully-connected ReLU classifier with per-layer activation recording.
//!
//! The forward pass returns a [`ForwardTrace`] carrying every post-ReLU
//! hidden activation, which is what both the training-time density penalty
//! and the energy proxy consume. Neuron pruning is realized as masking:
//! a masked neuron keeps its slot but has its incoming column, bias entry,
//! and outgoing row pinned to zero, so its activation is exactly 0.0 for
//! every input. `compact` converts masks into physically smaller layers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Hidden-layer activation function. Only ReLU is supported; it is the
/// sparsity-inducing activation that zero-skipping hardware exploits and
/// that the density penalty attacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Architecture description for [`MlpModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let cfg = MlpConfig {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::invalid("hidden_dims must be non-empty"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        Ok(())
    }

    /// Default architecture for 561-feature activity-recognition vectors.
    pub fn har_features_default() -> Self {
        MlpConfig {
            input_dim: 561,
            hidden_dims: vec![256, 128],
            num_classes: 6,
            activation: Activation::Relu,
        }
    }

    /// Default architecture for flattened motion-sensor windows.
    pub fn motion_windows_default(input_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims: vec![128, 64],
            num_classes: 6,
            activation: Activation::Relu,
        }
    }
}

/// One dense layer: weight is `in x out`, bias is `1 x out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Result of a forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: Tensor,
    /// Post-ReLU outputs of each hidden layer, in network order.
    pub hidden_activations: Vec<Tensor>,
}

/// Forward pass recorded on an autodiff graph, for training.
pub struct GraphForward {
    pub logits: NodeId,
    pub hidden: Vec<NodeId>,
    /// (weight, bias) leaf ids per layer, for gradient extraction.
    pub params: Vec<(NodeId, NodeId)>,
}

/// Fully-connected classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<Layer>,
    /// One mask per hidden layer; `false` marks a pruned neuron.
    neuron_masks: Vec<Vec<bool>>,
}

impl MlpModel {
    /// Glorot-uniform weights from a seeded stream, zero biases.
    /// Bit-identical across runs for the same (config, seed).
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, rng::SALT_INIT);
        let dims = config_dims(&config);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-bound, bound)
                .map_err(|e| Error::invalid(format!("weight init distribution: {e}")))?;
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| dist.sample(&mut rng))
                .collect();
            layers.push(Layer {
                weight: Tensor::new(fan_in, fan_out, data)?,
                bias: Tensor::zeros(1, fan_out),
            });
        }
        let neuron_masks = config.hidden_dims.iter().map(|&d| vec![true; d]).collect();
        Ok(MlpModel {
            config,
            layers,
            neuron_masks,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Direct parameter access, for optimizers and hand-built nets.
    /// Callers that edit masked slots must re-run [`validate`].
    ///
    /// [`validate`]: MlpModel::validate
    pub fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    pub fn neuron_masks(&self) -> &[Vec<bool>] {
        &self.neuron_masks
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.config.hidden_dims.len()
    }

    /// Zero a hidden neuron's incoming column, bias entry, and outgoing
    /// row, and record it in the mask.
    pub(crate) fn mask_neuron(&mut self, hidden_layer: usize, neuron: usize) {
        let cols = self.layers[hidden_layer].weight.cols();
        debug_assert!(neuron < cols);
        for r in 0..self.layers[hidden_layer].weight.rows() {
            self.layers[hidden_layer].weight.set(r, neuron, 0.0);
        }
        self.layers[hidden_layer].bias.set(0, neuron, 0.0);
        let out_cols = self.layers[hidden_layer + 1].weight.cols();
        for c in 0..out_cols {
            self.layers[hidden_layer + 1].weight.set(neuron, c, 0.0);
        }
        self.neuron_masks[hidden_layer][neuron] = false;
    }

    pub(crate) fn replace_structure(
        config: MlpConfig,
        layers: Vec<Layer>,
        neuron_masks: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let model = MlpModel {
            config,
            layers,
            neuron_masks,
        };
        model.validate()?;
        Ok(model)
    }

    /// Structural invariants: shape chaining, mask lengths, masked-slot
    /// zeroing, and finite parameters.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let dims = config_dims(&self.config);
        if self.layers.len() != dims.len() - 1 {
            return Err(Error::invalid(format!(
                "expected {} layers, found {}",
                dims.len() - 1,
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.shape() != (dims[i], dims[i + 1]) {
                return Err(Error::invalid(format!(
                    "layer {} weight shape {} does not chain ({}x{} expected)",
                    i,
                    layer.weight.shape_string(),
                    dims[i],
                    dims[i + 1]
                )));
            }
            if layer.bias.shape() != (1, dims[i + 1]) {
                return Err(Error::invalid(format!(
                    "layer {} bias shape {} invalid",
                    i,
                    layer.bias.shape_string()
                )));
            }
            if !layer.weight.all_finite() || !layer.bias.all_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        if self.neuron_masks.len() != self.config.hidden_dims.len() {
            return Err(Error::invalid("one neuron mask per hidden layer required"));
        }
        for (l, mask) in self.neuron_masks.iter().enumerate() {
            if mask.len() != self.config.hidden_dims[l] {
                return Err(Error::invalid(format!(
                    "mask length {} does not match hidden layer {} width {}",
                    mask.len(),
                    l,
                    self.config.hidden_dims[l]
                )));
            }
            for (j, &alive) in mask.iter().enumerate() {
                if !alive && !self.masked_slot_is_zero(l, j) {
                    return Err(Error::invalid(format!(
                        "masked neuron {j} of hidden layer {l} has nonzero weights"
                    )));
                }
            }
        }
        Ok(())
    }

    fn masked_slot_is_zero(&self, hidden_layer: usize, neuron: usize) -> bool {
        let w_in = &self.layers[hidden_layer].weight;
        for r in 0..w_in.rows() {
            if w_in.get(r, neuron) != 0.0 {
                return false;
            }
        }
        if self.layers[hidden_layer].bias.get(0, neuron) != 0.0 {
            return false;
        }
        let w_out = &self.layers[hidden_layer + 1].weight;
        for c in 0..w_out.cols() {
            if w_out.get(neuron, c) != 0.0 {
                return false;
            }
        }
        true
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: x.shape_string(),
                rhs: format!("_x{}", self.config.input_dim),
            });
        }
        if x.rows() == 0 {
            return Err(Error::invalid("forward on an empty batch"));
        }
        Ok(())
    }

    /// Plain inference pass recording all hidden activations.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut act = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = act.matmul(&layer.weight)?.add_row_broadcast(&layer.bias)?;
            if i + 1 == self.layers.len() {
                return Ok(ForwardTrace {
                    logits: z,
                    hidden_activations: hidden,
                });
            }
            act = z.relu();
            hidden.push(act.clone());
        }
        unreachable!("config guarantees at least one layer");
    }

    /// Forward pass on an autodiff graph; parameters become leaves so
    /// their gradients can be read after `backward`.
    pub fn forward_graph(&self, graph: &mut Graph, x: NodeId) -> Result<GraphForward> {
        if graph.value(x).cols() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: graph.value(x).shape_string(),
                rhs: format!("_x{}", self.config.input_dim),
            });
        }
        let mut params = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut act = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = graph.leaf(layer.weight.clone());
            let b = graph.leaf(layer.bias.clone());
            params.push((w, b));
            let z = graph.matmul(act, w)?;
            let z = graph.add_bias(z, b)?;
            if i + 1 == self.layers.len() {
                return Ok(GraphForward {
                    logits: z,
                    hidden,
                    params,
                });
            }
            act = graph.relu(z);
            hidden.push(act);
        }
        unreachable!("config guarantees at least one layer");
    }

    /// Per-row argmax of the logits; ties break to the lowest class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let trace = self.forward(x)?;
        Ok(argmax_rows(&trace.logits))
    }

    /// Percentage of rows predicted correctly.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.len() != x.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        let pred = self.predict(x)?;
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(100.0 * correct as f64 / labels.len() as f64)
    }

    /// FNV checksum over all parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers {
            for part in [&layer.weight, &layer.bias] {
                h ^= part.bit_checksum();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Write the model as JSON. Floats round-trip bit-exactly.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)
            .map_err(|e| Error::invalid(format!("model serialization failed: {e}")))
    }

    /// Load and validate a model written by [`MlpModel::save_json`].
    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let model: MlpModel =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                row: 0,
                msg: format!("invalid model JSON: {e}"),
            })?;
        model.validate()?;
        Ok(model)
    }
}

fn config_dims(config: &MlpConfig) -> Vec<usize> {
    let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
    dims.push(config.input_dim);
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(config.num_classes);
    dims
}

/// Row-wise argmax with lowest-index tie breaking.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row_slice(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
