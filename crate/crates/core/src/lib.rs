//! Desk-scale laboratory for energy-latency sponge poisoning of small
//! fully-connected sensing classifiers and for pruning-based defenses.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`] / [`autodiff`]: dense f64 tensors and a reverse-mode tape
//!   sufficient for MLP training and the activation-density penalty.
//! - [`model`]: configurable ReLU MLP whose forward pass records every
//!   hidden activation; JSON serialization; neuron masking.
//! - [`trainer`]: standard and poisoned training. The poisoned loss is
//!   cross-entropy minus lambda times a smooth nonzero-activation count
//!   over the poisoned samples, optimized with Adam, fully seeded.
//! - [`energy`]: deterministic zero-skipping MAC counts standing in for
//!   hardware energy/latency readings, plus informational wall-clock.
//! - [`pruning`]: magnitude weight pruning and smallest-norm neuron
//!   pruning as post-training defenses; mask compaction.
//! - [`data`]: feature CSVs, windowed sensor series, synthetic blobs,
//!   stratified splits, train-statistic standardization.
//! - [`experiment`] / [`svg`]: the attack/defense grid runner with
//!   deterministic CSV output and dependency-free trend charts.

// Validation guards use negated comparisons (`!(x > 0.0)`) so NaN fails
// the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod model;
pub mod pruning;
pub mod rng;
pub mod svg;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Graph, NodeId};
pub use data::{Dataset, WindowSpec};
pub use energy::EnergyReport;
pub use error::{Error, Result};
pub use experiment::{ExperimentRecord, GridSpec, PruneKind};
pub use model::{Activation, ForwardTrace, MlpConfig, MlpModel};
pub use pruning::{PruneConfig, PruneMethod};
pub use tensor::Tensor;
pub use trainer::{EpochStats, SpongeConfig, TrainConfig};
