//! Standard and density-poisoned training.
//!
//! The poisoned objective is the standard cross-entropy minus a weighted
//! activation-density reward: L = CE(all samples) - lambda * E(poisoned
//! subset), where E sums, over hidden layers, the per-layer mean of the
//! smooth nonzero surrogate v^2/(v^2+sigma). Minimizing L therefore pushes
//! the poisoned samples' activations dense while the cross-entropy keeps
//! the classifier accurate. Every stochastic choice is seeded, so two runs
//! with the same configuration are bit-identical.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::{self, Dataset};
use crate::energy;
use crate::error::{Error, Result};
use crate::model::{GraphForward, MlpConfig, MlpModel};
use crate::rng;
use crate::tensor::Tensor;

/// Density-attack knobs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpongeConfig {
    /// Weight of the density reward in the loss.
    pub lambda: f64,
    /// Smoothing constant of the nonzero surrogate.
    pub sigma: f64,
    /// Fraction of training samples whose loss carries the reward.
    pub poison_fraction: f64,
}

impl Default for SpongeConfig {
    fn default() -> Self {
        SpongeConfig {
            lambda: 1.0,
            sigma: 1e-5,
            poison_fraction: 0.0,
        }
    }
}

impl SpongeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::invalid("poison_fraction must lie in [0,1]"));
        }
        Ok(())
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub test_split: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Alternative poisoning mode: flag whole gradient updates instead of
    /// individual samples.
    pub poison_per_update: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 100,
            test_split: 0.2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            poison_per_update: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if !(self.test_split > 0.0 && self.test_split < 1.0) {
            return Err(Error::invalid("test_split must lie in (0,1)"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::invalid("Adam betas must lie in (0,1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Which training samples carry the density reward.
#[derive(Clone, Debug)]
pub struct PoisonAssignment {
    flags: Vec<bool>,
}

impl PoisonAssignment {
    /// Exactly round(fraction * n) samples are flagged; the choice is a
    /// pure function of (seed, fraction, n).
    pub fn assign(seed: u64, fraction: f64, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid("poison fraction must lie in [0,1]"));
        }
        let count = ((fraction * n as f64).round() as usize).min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng::stream(seed, rng::SALT_POISON));
        let mut flags = vec![false; n];
        for &i in &indices[..count] {
            flags[i] = true;
        }
        Ok(PoisonAssignment { flags })
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Differentiable density reward: sum over hidden layers of the per-layer
/// mean of v^2/(v^2+sigma). Each element's term lies in [0,1).
pub fn sponge_energy(graph: &mut Graph, hidden: &[NodeId], sigma: f64) -> Result<NodeId> {
    if hidden.is_empty() {
        return Err(Error::invalid(
            "density reward needs at least one hidden layer",
        ));
    }
    let mut total: Option<NodeId> = None;
    for &h in hidden {
        let term = graph.nonzero_surrogate_mean(h, sigma)?;
        total = Some(match total {
            None => term,
            Some(acc) => graph.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one hidden layer"))
}

/// Plain-value counterpart of [`sponge_energy`] for reporting and tests.
pub fn sponge_energy_value(hidden: &[Tensor], sigma: f64) -> f64 {
    hidden
        .iter()
        .map(|t| {
            t.data()
                .iter()
                .map(|&v| v * v / (v * v + sigma))
                .sum::<f64>()
                / t.len() as f64
        })
        .sum()
}

/// Loss graph for one batch, with handles needed downstream.
pub struct BatchLoss {
    pub loss: NodeId,
    pub cross_entropy: NodeId,
    pub forward: GraphForward,
}

/// Build L = CE(all) - lambda * E(poisoned subset) on `graph`. When no
/// sample is poisoned or lambda is zero, the loss node IS the
/// cross-entropy node, bit for bit.
pub fn sponge_loss(
    graph: &mut Graph,
    model: &MlpModel,
    x: &Tensor,
    labels: &[usize],
    poison_flags: &[bool],
    cfg: &SpongeConfig,
) -> Result<BatchLoss> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::invalid("sponge_loss on an empty batch"));
    }
    if poison_flags.len() != x.rows() || labels.len() != x.rows() {
        return Err(Error::invalid(format!(
            "batch size {} disagrees with {} labels / {} poison flags",
            x.rows(),
            labels.len(),
            poison_flags.len()
        )));
    }
    let x_id = graph.leaf(x.clone());
    let forward = model.forward_graph(graph, x_id)?;
    let cross_entropy = graph.softmax_cross_entropy(forward.logits, labels)?;
    let poisoned: Vec<usize> = poison_flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| i)
        .collect();
    let loss = if cfg.lambda == 0.0 || poisoned.is_empty() {
        cross_entropy
    } else {
        let selected: Vec<NodeId> = forward
            .hidden
            .iter()
            .map(|&h| graph.row_select(h, &poisoned))
            .collect::<Result<_>>()?;
        let energy = sponge_energy(graph, &selected, cfg.sigma)?;
        let penalty = graph.scale(energy, -cfg.lambda)?;
        graph.add(cross_entropy, penalty)?
    };
    Ok(BatchLoss {
        loss,
        cross_entropy,
        forward,
    })
}

/// Per-layer gradient pair pulled off a graph after `backward`.
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Extract parameter gradients for [`adam_step`].
pub fn collect_grads(graph: &Graph, forward: &GraphForward) -> Vec<LayerGrads> {
    forward
        .params
        .iter()
        .map(|&(w, b)| LayerGrads {
            weight: graph.grad(w).clone(),
            bias: graph.grad(b).clone(),
        })
        .collect()
}

/// First/second moment estimates per layer.
pub struct AdamState {
    moments: Vec<(Tensor, Tensor, Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let moments = model
            .layers()
            .iter()
            .map(|l| {
                (
                    Tensor::zeros(l.weight.rows(), l.weight.cols()),
                    Tensor::zeros(l.weight.rows(), l.weight.cols()),
                    Tensor::zeros(1, l.bias.cols()),
                    Tensor::zeros(1, l.bias.cols()),
                )
            })
            .collect();
        AdamState { moments }
    }
}

/// One Adam update: m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, bias
/// correction, then theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step(
    model: &mut MlpModel,
    grads: &[LayerGrads],
    state: &mut AdamState,
    t: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("Adam step count starts at 1"));
    }
    if grads.len() != state.moments.len() {
        return Err(Error::invalid("gradient/state layer count mismatch"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (layer, (grad, (mw, vw, mb, vb))) in model
        .layers_mut()
        .iter_mut()
        .zip(grads.iter().zip(state.moments.iter_mut()))
    {
        update_param(&mut layer.weight, &grad.weight, mw, vw, bc1, bc2, cfg)?;
        update_param(&mut layer.bias, &grad.bias, mb, vb, bc1, bc2, cfg)?;
    }
    Ok(())
}

fn update_param(
    theta: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    bc1: f64,
    bc2: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grad.shape() != theta.shape() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: grad.shape_string(),
            rhs: theta.shape_string(),
        });
    }
    for i in 0..theta.len() {
        let g = grad.data()[i];
        let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
        m.data_mut()[i] = mi;
        v.data_mut()[i] = vi;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        theta.data_mut()[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    if !theta.all_finite() {
        return Err(Error::NonFinite("adam_step"));
    }
    Ok(())
}

/// One row of the per-epoch training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_density: f64,
}

/// Training history as CSV: epoch, train_loss, train_acc, test_acc,
/// mean_density.
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,test_acc,mean_density\n");
    for s in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.epoch,
            crate::fmt::sig(s.train_loss, 6),
            crate::fmt::sig(s.train_acc, 6),
            crate::fmt::sig(s.test_acc, 6),
            crate::fmt::sig(s.mean_density, 6),
        ));
    }
    out
}

/// Everything a training run produces, including the standardized split
/// so callers can evaluate on exactly the data the run saw.
pub struct TrainOutput {
    pub model: MlpModel,
    pub history: Vec<EpochStats>,
    pub train: Dataset,
    pub test: Dataset,
}

/// Train with the poisoned objective. With poison_fraction = 0 (or
/// lambda = 0) this reduces exactly to vanilla cross-entropy training.
pub fn train(
    dataset: &Dataset,
    mlp_cfg: &MlpConfig,
    train_cfg: &TrainConfig,
    sponge_cfg: &SpongeConfig,
) -> Result<(MlpModel, Vec<EpochStats>)> {
    let out = train_with_artifacts(dataset, mlp_cfg, train_cfg, sponge_cfg)?;
    Ok((out.model, out.history))
}

/// As [`train`] but also returns the standardized train/test split.
pub fn train_with_artifacts(
    dataset: &Dataset,
    mlp_cfg: &MlpConfig,
    train_cfg: &TrainConfig,
    sponge_cfg: &SpongeConfig,
) -> Result<TrainOutput> {
    train_cfg.validate()?;
    sponge_cfg.validate()?;
    mlp_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if dataset.dim() != mlp_cfg.input_dim {
        return Err(Error::invalid(format!(
            "dataset dimension {} does not match model input_dim {}",
            dataset.dim(),
            mlp_cfg.input_dim
        )));
    }
    if dataset.num_classes != mlp_cfg.num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model expects {}",
            dataset.num_classes, mlp_cfg.num_classes
        )));
    }

    let (mut train_ds, mut test_ds) = data::split(dataset, train_cfg.test_split, train_cfg.seed)?;
    data::standardize(&mut train_ds, &mut test_ds)?;
    let n_train = train_ds.len();
    let poison = PoisonAssignment::assign(train_cfg.seed, sponge_cfg.poison_fraction, n_train)?;

    let mut model = MlpModel::init(mlp_cfg.clone(), train_cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let mut step = 0usize;
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        use rand::seq::SliceRandom;
        let mut epoch_rng = rng::epoch_stream(train_cfg.seed, epoch);
        order.shuffle(&mut epoch_rng);

        let num_batches = n_train.div_ceil(train_cfg.batch_size);
        let poisoned_updates = if train_cfg.poison_per_update {
            let mut update_ids: Vec<usize> = (0..num_batches).collect();
            update_ids.shuffle(&mut epoch_rng);
            let count = ((sponge_cfg.poison_fraction * num_batches as f64).round() as usize)
                .min(num_batches);
            let mut flags = vec![false; num_batches];
            for &u in &update_ids[..count] {
                flags[u] = true;
            }
            flags
        } else {
            Vec::new()
        };

        let mut ce_sum = 0.0;
        for (batch_no, batch_rows) in order.chunks(train_cfg.batch_size).enumerate() {
            let x = train_ds.features.select_rows(batch_rows)?;
            let labels: Vec<usize> = batch_rows.iter().map(|&r| train_ds.labels[r]).collect();
            let flags: Vec<bool> = if train_cfg.poison_per_update {
                vec![poisoned_updates[batch_no]; batch_rows.len()]
            } else {
                batch_rows.iter().map(|&r| poison.flags()[r]).collect()
            };
            let mut graph = Graph::new();
            let batch = sponge_loss(&mut graph, &model, &x, &labels, &flags, sponge_cfg)?;
            graph.backward(batch.loss)?;
            ce_sum += graph.scalar(batch.cross_entropy) * batch_rows.len() as f64;
            let grads = collect_grads(&graph, &batch.forward);
            step += 1;
            adam_step(&mut model, &grads, &mut adam, step, train_cfg)?;
        }

        let train_acc = model.accuracy(&train_ds.features, &train_ds.labels)?;
        let test_trace = model.forward(&test_ds.features)?;
        let test_acc = {
            let pred = crate::model::argmax_rows(&test_trace.logits);
            100.0
                * pred
                    .iter()
                    .zip(&test_ds.labels)
                    .filter(|(p, l)| p == l)
                    .count() as f64
                / test_ds.len() as f64
        };
        let densities = energy::density(&test_trace, 0.0)?;
        history.push(EpochStats {
            epoch,
            train_loss: ce_sum / n_train as f64,
            train_acc,
            test_acc,
            mean_density: energy::mean_density(&densities),
        });
    }

    Ok(TrainOutput {
        model,
        history,
        train: train_ds,
        test: test_ds,
    })
}
