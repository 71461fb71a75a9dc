//! Post-training pruning defenses: unstructured magnitude weight pruning
//! and structured neuron pruning, both applied without retraining. Every
//! prune returns a new model; the input is left untouched so experiment
//! grids can keep the unpruned snapshot for comparison rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layer, MlpConfig, MlpModel};

/// Pruning method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    Weight,
    Neuron,
}

/// A single pruning action.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PruneConfig {
    pub method: PruneMethod,
    /// Fraction of weights (or neurons per layer) to remove, in (0,1).
    pub rate: f64,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        validate_rate(self.rate)
    }

    pub fn apply(&self, model: &MlpModel) -> Result<MlpModel> {
        match self.method {
            PruneMethod::Weight => weight_prune(model, self.rate),
            PruneMethod::Neuron => neuron_prune(model, self.rate),
        }
    }
}

fn validate_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!(
            "prune rate must lie in (0,1), got {rate}"
        )));
    }
    Ok(())
}

/// Zero the floor(rate * count) smallest-magnitude weights within each
/// layer independently; ties break to the lower flat index. Biases are
/// untouched.
pub fn weight_prune(model: &MlpModel, rate: f64) -> Result<MlpModel> {
    validate_rate(rate)?;
    let mut pruned = model.clone();
    for layer in pruned.layers_mut() {
        let w = &mut layer.weight;
        let k = (rate * w.len() as f64).floor() as usize;
        if k == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| {
            w.data()[a]
                .abs()
                .partial_cmp(&w.data()[b].abs())
                .expect("finite weights")
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(k) {
            w.data_mut()[i] = 0.0;
        }
    }
    Ok(pruned)
}

/// Mask the floor(rate * width) neurons with the smallest incoming-column
/// L2 norm in each hidden layer; ties break to the lower neuron index.
/// Masking zeroes the incoming column, the bias entry, and the outgoing
/// row. Fails if a layer would end up with no live neuron.
pub fn neuron_prune(model: &MlpModel, rate: f64) -> Result<MlpModel> {
    validate_rate(rate)?;
    let mut pruned = model.clone();
    for l in 0..pruned.num_hidden_layers() {
        let width = pruned.config().hidden_dims[l];
        let k = (rate * width as f64).floor() as usize;
        if k == 0 {
            continue;
        }
        let norms: Vec<f64> = (0..width)
            .map(|j| {
                let w = &pruned.layers()[l].weight;
                (0..w.rows())
                    .map(|r| w.get(r, j).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let mut order: Vec<usize> = (0..width).collect();
        order.sort_by(|&a, &b| {
            norms[a]
                .partial_cmp(&norms[b])
                .expect("finite norms")
                .then(a.cmp(&b))
        });
        let selected = &order[..k];
        let survivors = (0..width)
            .filter(|j| pruned.neuron_masks()[l][*j] && !selected.contains(j))
            .count();
        if survivors == 0 {
            return Err(Error::invalid(format!(
                "neuron pruning at rate {rate} would empty hidden layer {l}"
            )));
        }
        for &j in selected {
            pruned.mask_neuron(l, j);
        }
    }
    Ok(pruned)
}

/// Physically remove masked neurons, producing smaller dense layers.
/// Predictions are identical to the masked model on every input.
pub fn compact(model: &MlpModel) -> Result<MlpModel> {
    let keep: Vec<Vec<usize>> = model
        .neuron_masks()
        .iter()
        .map(|mask| {
            mask.iter()
                .enumerate()
                .filter(|(_, &alive)| alive)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    if keep.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid("compact would leave an empty hidden layer"));
    }
    let old_cfg = model.config();
    let config = MlpConfig {
        input_dim: old_cfg.input_dim,
        hidden_dims: keep.iter().map(|k| k.len()).collect(),
        num_classes: old_cfg.num_classes,
        activation: old_cfg.activation,
    };
    let num_layers = model.layers().len();
    let mut layers = Vec::with_capacity(num_layers);
    for (l, layer) in model.layers().iter().enumerate() {
        let in_keep: Vec<usize> = if l == 0 {
            (0..old_cfg.input_dim).collect()
        } else {
            keep[l - 1].clone()
        };
        let out_keep: Vec<usize> = if l == num_layers - 1 {
            (0..old_cfg.num_classes).collect()
        } else {
            keep[l].clone()
        };
        let mut w = crate::tensor::Tensor::zeros(in_keep.len(), out_keep.len());
        for (ri, &r) in in_keep.iter().enumerate() {
            for (ci, &c) in out_keep.iter().enumerate() {
                w.set(ri, ci, layer.weight.get(r, c));
            }
        }
        let mut b = crate::tensor::Tensor::zeros(1, out_keep.len());
        for (ci, &c) in out_keep.iter().enumerate() {
            b.set(0, ci, layer.bias.get(0, c));
        }
        layers.push(Layer { weight: w, bias: b });
    }
    let masks = config.hidden_dims.iter().map(|&d| vec![true; d]).collect();
    MlpModel::replace_structure(config, layers, masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpConfig;
    use crate::tensor::Tensor;

    fn model_with_first_layer(weights: &[Vec<f64>]) -> MlpModel {
        let in_dim = weights.len();
        let out_dim = weights[0].len();
        let cfg = MlpConfig::new(in_dim, vec![out_dim], 2).unwrap();
        let mut m = MlpModel::init(cfg, 0).unwrap();
        m.layers_mut()[0].weight = Tensor::from_rows(weights).unwrap();
        m
    }

    #[test]
    fn weight_prune_zeroes_two_smallest_magnitudes() {
        let m = model_with_first_layer(&[vec![0.1, -0.5], vec![0.05, 2.0]]);
        let p = weight_prune(&m, 0.5).unwrap();
        assert_eq!(p.layers()[0].weight.data(), &[0.0, -0.5, 0.0, 2.0]);
        // original untouched
        assert_eq!(m.layers()[0].weight.data(), &[0.1, -0.5, 0.05, 2.0]);
    }

    #[test]
    fn weight_prune_floor_rule_keeps_model_unchanged() {
        let m = model_with_first_layer(&[vec![0.1, -0.5], vec![0.05, 2.0]]);
        let p = weight_prune(&m, 0.2).unwrap();
        // floor(0.2 * 4) = 0 in the hidden layer; output layer floor(0.2*4)=0
        assert_eq!(p.checksum(), m.checksum());
    }

    #[test]
    fn weight_prune_tie_breaks_to_lowest_index() {
        let m = model_with_first_layer(&[vec![1.0, -1.0], vec![2.0, -2.0]]);
        let p = weight_prune(&m, 0.25).unwrap();
        assert_eq!(p.layers()[0].weight.data(), &[0.0, -1.0, 2.0, -2.0]);
    }

    #[test]
    fn weight_prune_zero_count_and_no_survivor_below_zeroed_magnitude() {
        let cfg = MlpConfig::new(5, vec![7, 4], 3).unwrap();
        let m = MlpModel::init(cfg, 9).unwrap();
        let rate = 0.3;
        let p = weight_prune(&m, rate).unwrap();
        for (orig, pruned) in m.layers().iter().zip(p.layers()) {
            let expected = (rate * orig.weight.len() as f64).floor() as usize;
            let zeros_before = orig.weight.data().iter().filter(|&&v| v == 0.0).count();
            let zeros_after = pruned.weight.data().iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros_after, zeros_before + expected);
            // no surviving weight is smaller in magnitude than a zeroed one
            let max_zeroed = orig
                .weight
                .data()
                .iter()
                .zip(pruned.weight.data())
                .filter(|(&o, &p)| o != 0.0 && p == 0.0)
                .map(|(&o, _)| o.abs())
                .fold(0.0_f64, f64::max);
            let min_survivor = pruned
                .weight
                .data()
                .iter()
                .filter(|&&v| v != 0.0)
                .map(|v| v.abs())
                .fold(f64::INFINITY, f64::min);
            assert!(min_survivor >= max_zeroed);
        }
    }

    #[test]
    fn weight_prune_is_idempotent_at_same_rate() {
        let cfg = MlpConfig::new(4, vec![6], 3).unwrap();
        let m = MlpModel::init(cfg, 5).unwrap();
        let once = weight_prune(&m, 0.4).unwrap();
        let twice = weight_prune(&once, 0.4).unwrap();
        assert_eq!(once.checksum(), twice.checksum());
    }

    #[test]
    fn neuron_prune_masks_smallest_norm() {
        // norms [3, 1, 2, 5] -> neuron 1 masked at rate 0.25
        let m = model_with_first_layer(&[vec![3.0, 1.0, 2.0, 5.0]]);
        let p = neuron_prune(&m, 0.25).unwrap();
        assert_eq!(p.neuron_masks()[0], vec![true, false, true, true]);
        assert_eq!(p.layers()[0].weight.get(0, 1), 0.0);
        assert!(p.layers()[1].weight.row_slice(1).iter().all(|&v| v == 0.0));
        p.validate().unwrap();
    }

    #[test]
    fn neuron_prune_floor_rule() {
        let m = model_with_first_layer(&[vec![3.0, 1.0, 2.0, 5.0]]);
        let p = neuron_prune(&m, 0.1).unwrap();
        assert_eq!(p.checksum(), m.checksum());
        assert!(p.neuron_masks()[0].iter().all(|&a| a));
    }

    #[test]
    fn neuron_prune_is_idempotent_at_same_rate() {
        let cfg = MlpConfig::new(3, vec![8, 5], 2).unwrap();
        let m = MlpModel::init(cfg, 13).unwrap();
        let once = neuron_prune(&m, 0.4).unwrap();
        let twice = neuron_prune(&once, 0.4).unwrap();
        assert_eq!(once.checksum(), twice.checksum());
        assert_eq!(once.neuron_masks(), twice.neuron_masks());
    }

    #[test]
    fn masked_neuron_is_silent_on_random_probes() {
        use rand::Rng;
        let cfg = MlpConfig::new(4, vec![5], 3).unwrap();
        let m = MlpModel::init(cfg, 21).unwrap();
        let p = neuron_prune(&m, 0.3).unwrap();
        let masked: Vec<usize> = p.neuron_masks()[0]
            .iter()
            .enumerate()
            .filter(|(_, &a)| !a)
            .map(|(j, _)| j)
            .collect();
        assert_eq!(masked.len(), 1);
        let mut rng = crate::rng::stream(2, 0x50);
        for _ in 0..50 {
            let x =
                Tensor::new(1, 4, (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let trace = p.forward(&x).unwrap();
            for &j in &masked {
                assert_eq!(trace.hidden_activations[0].get(0, j), 0.0);
            }
        }
    }

    #[test]
    fn neuron_prune_reduces_energy_proxy() {
        use rand::Rng;
        let cfg = MlpConfig::new(6, vec![8, 6], 3).unwrap();
        let m = MlpModel::init(cfg, 30).unwrap();
        let mut rng = crate::rng::stream(3, 0xE7);
        let x = Tensor::new(10, 6, (0..60).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        let p = neuron_prune(&m, 0.3).unwrap();
        let before = crate::energy::energy_proxy(&m, &x).unwrap();
        let after = crate::energy::energy_proxy(&p, &x).unwrap();
        assert!(after.proxy_energy < before.proxy_energy);
    }

    #[test]
    fn compact_without_masks_keeps_shapes() {
        let cfg = MlpConfig::new(3, vec![4, 2], 2).unwrap();
        let m = MlpModel::init(cfg, 0).unwrap();
        let c = compact(&m).unwrap();
        assert_eq!(c.config().hidden_dims, vec![4, 2]);
        assert_eq!(c.checksum(), m.checksum());
    }

    #[test]
    fn compact_shrinks_one_of_four() {
        let m = model_with_first_layer(&[vec![3.0, 1.0, 2.0, 5.0]]);
        let p = neuron_prune(&m, 0.25).unwrap();
        let c = compact(&p).unwrap();
        assert_eq!(c.config().hidden_dims, vec![3]);
    }

    #[test]
    fn compact_preserves_logits_exactly() {
        use rand::Rng;
        let cfg = MlpConfig::new(5, vec![9, 6], 4).unwrap();
        let m = MlpModel::init(cfg, 77).unwrap();
        let p = neuron_prune(&m, 0.34).unwrap();
        let c = compact(&p).unwrap();
        let mut rng = crate::rng::stream(4, 0xC0);
        for _ in 0..100 {
            let x =
                Tensor::new(1, 5, (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let masked = p.forward(&x).unwrap().logits;
            let compacted = c.forward(&x).unwrap().logits;
            let max_diff = masked
                .data()
                .iter()
                .zip(compacted.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert_eq!(max_diff, 0.0);
            assert_eq!(p.predict(&x).unwrap(), c.predict(&x).unwrap());
        }
    }

    #[test]
    fn rate_bounds_are_enforced() {
        let m = model_with_first_layer(&[vec![1.0, 2.0]]);
        assert!(weight_prune(&m, 0.0).is_err());
        assert!(weight_prune(&m, 1.0).is_err());
        assert!(neuron_prune(&m, -0.1).is_err());
    }
}
