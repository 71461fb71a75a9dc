//! Microbenchmarks for the hot paths: inference, one training update,
//! the energy proxy, and pruning.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use spongelab_core::autodiff::Graph;
use spongelab_core::data;
use spongelab_core::energy;
use spongelab_core::model::{MlpConfig, MlpModel};
use spongelab_core::pruning;
use spongelab_core::tensor::Tensor;
use spongelab_core::trainer::{self, AdamState, SpongeConfig, TrainConfig};

fn probe_batch(rows: usize, dim: usize) -> Tensor {
    use rand::Rng;
    let mut rng = spongelab_core::rng::stream(0, 0xBE);
    Tensor::new(
        rows,
        dim,
        (0..rows * dim)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap()
}

fn default_model() -> MlpModel {
    MlpModel::init(MlpConfig::new(20, vec![32, 16], 6).unwrap(), 0).unwrap()
}

fn bench_forward(c: &mut Criterion) {
    let model = default_model();
    let x = probe_batch(64, 20);
    c.bench_function("forward_64x20", |b| {
        b.iter(|| black_box(model.forward(black_box(&x)).unwrap()))
    });
}

fn bench_training_step(c: &mut Criterion) {
    let mut model = default_model();
    let x = probe_batch(64, 20);
    let labels: Vec<usize> = (0..64).map(|i| i % 6).collect();
    let flags = vec![true; 64];
    let sponge = SpongeConfig {
        lambda: 1.0,
        sigma: 1e-5,
        poison_fraction: 1.0,
    };
    let train_cfg = TrainConfig::default();
    let mut state = AdamState::new(&model);
    let mut t = 0;
    c.bench_function("poisoned_update_64x20", |b| {
        b.iter(|| {
            let mut graph = Graph::new();
            let batch =
                trainer::sponge_loss(&mut graph, &model, &x, &labels, &flags, &sponge).unwrap();
            graph.backward(batch.loss).unwrap();
            let grads = trainer::collect_grads(&graph, &batch.forward);
            t += 1;
            trainer::adam_step(&mut model, &grads, &mut state, t, &train_cfg).unwrap();
        })
    });
}

fn bench_energy_proxy(c: &mut Criterion) {
    let model = default_model();
    let x = probe_batch(120, 20);
    c.bench_function("energy_proxy_120x20", |b| {
        b.iter(|| black_box(energy::energy_proxy(&model, black_box(&x)).unwrap()))
    });
}

fn bench_pruning(c: &mut Criterion) {
    let model = default_model();
    c.bench_function("weight_prune_50pct", |b| {
        b.iter(|| black_box(pruning::weight_prune(black_box(&model), 0.5).unwrap()))
    });
    c.bench_function("neuron_prune_30pct", |b| {
        b.iter(|| black_box(pruning::neuron_prune(black_box(&model), 0.3).unwrap()))
    });
}

fn bench_synth_blobs(c: &mut Criterion) {
    c.bench_function("synth_blobs_600x20", |b| {
        b.iter(|| black_box(data::synth_blobs(100, 6, 20, 1.0, 0).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_forward,
    bench_training_step,
    bench_energy_proxy,
    bench_pruning,
    bench_synth_blobs
);
criterion_main!(benches);
