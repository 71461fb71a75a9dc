//! Hardware-agnostic energy and latency proxies.
//!
//! A zero-skipping accelerator only spends a multiply-accumulate when the
//! input operand is nonzero (and a zero weight contributes nothing), so we
//! count exactly those (nonzero activation, nonzero weight) pairs layer by
//! layer: that count is the energy proxy and, under the same accounting,
//! the latency proxy. The worst case counts every pair. Wall-clock timing
//! is recorded for information only; it never participates in any
//! assertion or acceptance check.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fmt;
use crate::model::{ForwardTrace, MlpModel};
use crate::tensor::Tensor;

/// Activation-density and operation-count summary for one probe batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    /// Fraction of nonzero activations per hidden layer.
    pub per_layer_density: Vec<f64>,
    /// Unweighted mean of the per-layer densities.
    pub mean_density: f64,
    /// MACs executed under zero-skipping.
    pub proxy_energy: f64,
    /// MACs if every operand were nonzero.
    pub worst_case_energy: f64,
    /// proxy_energy / worst_case_energy, in `[0,1]`.
    pub energy_ratio: f64,
    /// Same count as proxy_energy, kept as an integer op count.
    pub latency_ops: u64,
    /// Informational median forward time; 0.0 when not measured.
    pub wall_clock_seconds: f64,
}

impl EnergyReport {
    pub const CSV_HEADER: &'static str =
        "mean_density,energy_ratio,proxy_energy,worst_case_energy,latency_ops,wall_clock_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            fmt::sig(self.mean_density, 6),
            fmt::sig(self.energy_ratio, 6),
            fmt::sig(self.proxy_energy, 6),
            fmt::sig(self.worst_case_energy, 6),
            self.latency_ops,
            fmt::fixed6(self.wall_clock_seconds),
        )
    }
}

/// Fraction of activations with |v| > threshold, per hidden layer.
/// The default threshold 0 counts exact zeros, which is sound because
/// ReLU emits exact zeros.
pub fn density(trace: &ForwardTrace, threshold: f64) -> Result<Vec<f64>> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid("density threshold must be non-negative"));
    }
    Ok(trace
        .hidden_activations
        .iter()
        .map(|t| t.data().iter().filter(|v| v.abs() > threshold).count() as f64 / t.len() as f64)
        .collect())
}

/// Unweighted mean over hidden layers.
pub fn mean_density(per_layer: &[f64]) -> f64 {
    if per_layer.is_empty() {
        return 0.0;
    }
    per_layer.iter().sum::<f64>() / per_layer.len() as f64
}

/// Count zero-skipping MACs for this batch with an exact-zero activation
/// threshold.
pub fn energy_proxy(model: &MlpModel, x: &Tensor) -> Result<EnergyReport> {
    energy_proxy_with_threshold(model, x, 0.0)
}

/// As [`energy_proxy`] with a configurable activation threshold for
/// ingested quantized data.
pub fn energy_proxy_with_threshold(
    model: &MlpModel,
    x: &Tensor,
    threshold: f64,
) -> Result<EnergyReport> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid("activation threshold must be non-negative"));
    }
    let trace = model.forward(x)?;
    let mut proxy: u64 = 0;
    let mut worst: u64 = 0;
    let mut layer_input = x;
    for (l, layer) in model.layers().iter().enumerate() {
        // Nonzero fan-out of each weight row: MACs one active input incurs.
        let w = &layer.weight;
        let row_nnz: Vec<u64> = (0..w.rows())
            .map(|i| w.row_slice(i).iter().filter(|&&v| v != 0.0).count() as u64)
            .collect();
        for r in 0..layer_input.rows() {
            let row = layer_input.row_slice(r);
            for (i, &a) in row.iter().enumerate() {
                if a.abs() > threshold {
                    proxy += row_nnz[i];
                }
            }
        }
        worst += (layer_input.rows() * w.rows() * w.cols()) as u64;
        if l < trace.hidden_activations.len() {
            layer_input = &trace.hidden_activations[l];
        }
    }
    let per_layer_density = density(&trace, threshold)?;
    Ok(EnergyReport {
        mean_density: mean_density(&per_layer_density),
        per_layer_density,
        proxy_energy: proxy as f64,
        worst_case_energy: worst as f64,
        energy_ratio: proxy as f64 / worst as f64,
        latency_ops: proxy,
        wall_clock_seconds: 0.0,
    })
}

/// Median wall-clock seconds of a forward pass over `repeats` runs.
/// Informational only.
pub fn wall_clock_latency(model: &MlpModel, x: &Tensor, repeats: usize) -> Result<f64> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let mut times: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            let _ = model.forward(x)?;
            Ok(start.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}
