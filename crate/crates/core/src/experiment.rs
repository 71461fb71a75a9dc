//! Attack/defense experiment grid: train one model per (seed, poison
//! level), evaluate it unpruned and under every pruning configuration,
//! and emit deterministic CSV tables.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::energy;
use crate::error::{Error, Result};
use crate::fmt;
use crate::model::{MlpConfig, MlpModel};
use crate::pruning;
use crate::trainer::{self, SpongeConfig, TrainConfig};

/// Pruning column of a grid record. `None` marks the unpruned row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneKind {
    None,
    Weight,
    Neuron,
}

impl PruneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneKind::None => "none",
            PruneKind::Weight => "weight",
            PruneKind::Neuron => "neuron",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PruneKind::None),
            "weight" => Ok(PruneKind::Weight),
            "neuron" => Ok(PruneKind::Neuron),
            other => Err(Error::invalid(format!("unknown prune type '{other}'"))),
        }
    }
}

/// One grid cell's outcome. The tuple (sponge_pct, prune_type, prune_pct,
/// seed, dataset) is the unique key and the sort order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub sponge_pct: u32,
    pub prune_type: PruneKind,
    pub prune_pct: u32,
    pub test_acc: f64,
    pub energy_ratio: f64,
    pub proxy_energy: f64,
    pub latency_ops: u64,
    pub wall_clock_s: f64,
    pub seed: u64,
}

impl ExperimentRecord {
    pub const CSV_HEADER: &'static str =
        "dataset,sponge_pct,prune_type,prune_pct,test_acc,energy_ratio,proxy_energy,latency_ops,wall_clock_s,seed";

    fn key(&self) -> (u32, PruneKind, u32, u64, String) {
        (
            self.sponge_pct,
            self.prune_type,
            self.prune_pct,
            self.seed,
            self.dataset.clone(),
        )
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.sponge_pct,
            self.prune_type.as_str(),
            self.prune_pct,
            fmt::sig(self.test_acc, 6),
            fmt::sig(self.energy_ratio, 6),
            fmt::sig(self.proxy_energy, 6),
            self.latency_ops,
            fmt::fixed6(self.wall_clock_s),
            self.seed,
        )
    }
}

/// Grid definition. The defaults sweep poison levels 0..100 in steps
/// of 10, weight and neuron pruning at 10..50 percent, and three seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub sponge_pcts: Vec<u32>,
    pub prune_types: Vec<PruneKind>,
    pub prune_pcts: Vec<u32>,
    pub seeds: Vec<u64>,
    pub hidden_dims: Vec<usize>,
    pub train: TrainConfig,
    pub lambda: f64,
    pub sigma: f64,
    /// Wall-clock timing makes records non-reproducible byte-for-byte, so
    /// it is off by default; records carry 0.0 then.
    pub measure_wall_clock: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            sponge_pcts: (0..=100).step_by(10).collect(),
            prune_types: vec![PruneKind::Weight, PruneKind::Neuron],
            prune_pcts: vec![10, 20, 30, 40, 50],
            seeds: vec![0, 1, 2],
            hidden_dims: vec![32, 16],
            train: TrainConfig::default(),
            lambda: 1.0,
            sigma: 1e-5,
            measure_wall_clock: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sponge_pcts.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sponge_pcts and seeds must be non-empty"));
        }
        if let Some(&bad) = self.sponge_pcts.iter().find(|&&p| p > 100) {
            return Err(Error::invalid(format!("sponge_pct {bad} exceeds 100")));
        }
        if let Some(&bad) = self.prune_pcts.iter().find(|&&p| p == 0 || p >= 100) {
            return Err(Error::invalid(format!(
                "prune_pct {bad} must lie in 1..=99"
            )));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::invalid("hidden_dims must be non-empty"));
        }
        self.train.validate()?;
        SpongeConfig {
            lambda: self.lambda,
            sigma: self.sigma,
            poison_fraction: 0.0,
        }
        .validate()
    }

    /// Records each (dataset, seed) pair will produce: the unpruned row
    /// plus one per (prune type, prune level).
    pub fn records_per_seed(&self) -> usize {
        let prune_cells = self
            .prune_types
            .iter()
            .filter(|t| **t != PruneKind::None)
            .count()
            * self.prune_pcts.len();
        self.sponge_pcts.len() * (1 + prune_cells)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let spec: GridSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: format!("invalid grid spec JSON: {e}"),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

fn evaluate(
    model: &MlpModel,
    test: &Dataset,
    measure_wall_clock: bool,
) -> Result<(f64, energy::EnergyReport)> {
    let acc = model.accuracy(&test.features, &test.labels)?;
    let mut report = energy::energy_proxy(model, &test.features)?;
    if measure_wall_clock {
        report.wall_clock_seconds = energy::wall_clock_latency(model, &test.features, 5)?;
    }
    Ok((acc, report))
}

/// (seed, sponge_pct) cell key paired with its outcome.
type CellOutcome = ((u64, u32), Result<Vec<ExperimentRecord>>);

fn run_training_cell(
    spec: &GridSpec,
    dataset: &Dataset,
    seed: u64,
    sponge_pct: u32,
) -> Result<Vec<ExperimentRecord>> {
    let mlp_cfg = MlpConfig::new(dataset.dim(), spec.hidden_dims.clone(), dataset.num_classes)?;
    let train_cfg = TrainConfig { seed, ..spec.train };
    let sponge_cfg = SpongeConfig {
        lambda: spec.lambda,
        sigma: spec.sigma,
        poison_fraction: sponge_pct as f64 / 100.0,
    };
    let out = trainer::train_with_artifacts(dataset, &mlp_cfg, &train_cfg, &sponge_cfg)?;

    let mut records = Vec::with_capacity(spec.records_per_seed() / spec.sponge_pcts.len());
    let record =
        |prune_type: PruneKind, prune_pct: u32, acc: f64, report: &energy::EnergyReport| {
            ExperimentRecord {
                dataset: dataset.name.clone(),
                sponge_pct,
                prune_type,
                prune_pct,
                test_acc: acc,
                energy_ratio: report.energy_ratio,
                proxy_energy: report.proxy_energy,
                latency_ops: report.latency_ops,
                wall_clock_s: report.wall_clock_seconds,
                seed,
            }
        };

    let (acc, report) = evaluate(&out.model, &out.test, spec.measure_wall_clock)?;
    records.push(record(PruneKind::None, 0, acc, &report));

    for &prune_type in &spec.prune_types {
        if prune_type == PruneKind::None {
            continue;
        }
        for &pct in &spec.prune_pcts {
            let rate = pct as f64 / 100.0;
            let pruned = match prune_type {
                PruneKind::Weight => pruning::weight_prune(&out.model, rate)?,
                PruneKind::Neuron => pruning::neuron_prune(&out.model, rate)?,
                PruneKind::None => unreachable!(),
            };
            let (acc, report) = evaluate(&pruned, &out.test, spec.measure_wall_clock)?;
            records.push(record(prune_type, pct, acc, &report));
        }
    }
    Ok(records)
}

/// Run the full grid. Training happens once per (seed, sponge level);
/// every pruning cell reuses that snapshot. Cells run in parallel and the
/// result is key-sorted, so records are a pure function of (spec,
/// dataset, seeds). On any cell failure the completed records are flushed
/// to `partial_csv` (when given, with a .partial suffix expected in the
/// path) and the error names the failing cell.
pub fn run_grid(
    spec: &GridSpec,
    dataset: &Dataset,
    partial_csv: Option<&Path>,
) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let cells: Vec<(u64, u32)> = spec
        .seeds
        .iter()
        .flat_map(|&s| spec.sponge_pcts.iter().map(move |&p| (s, p)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(seed, pct)| ((seed, pct), run_training_cell(spec, dataset, seed, pct)))
        .collect();
    aggregate_cells(outcomes, &dataset.name, partial_csv)
}

/// Merge per-cell outcomes: sort successes by key; on any failure, flush
/// what completed to `partial_csv` and surface the error of the smallest
/// failing key.
fn aggregate_cells(
    outcomes: Vec<CellOutcome>,
    dataset_name: &str,
    partial_csv: Option<&Path>,
) -> Result<Vec<ExperimentRecord>> {
    let mut records = Vec::new();
    let mut first_error: Option<((u64, u32), Error)> = None;
    for ((seed, pct), outcome) in outcomes {
        match outcome {
            Ok(mut r) => records.append(&mut r),
            Err(e) => {
                let replace = match &first_error {
                    None => true,
                    Some(((s0, p0), _)) => (pct, seed) < (*p0, *s0),
                };
                if replace {
                    first_error = Some(((seed, pct), e));
                }
            }
        }
    }
    records.sort_by_key(|r| r.key());

    if let Some(((seed, pct), source)) = first_error {
        if let (Some(path), false) = (partial_csv, records.is_empty()) {
            let _ = emit_csv(&records, path);
        }
        return Err(Error::Grid {
            key: format!("(dataset={dataset_name}, sponge_pct={pct}, seed={seed})"),
            source: Box::new(source),
        });
    }
    Ok(records)
}

/// Write records as CSV with the fixed column order and 6-significant-
/// digit reals. Rows are key-sorted; identical record sets produce
/// identical bytes.
pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to emit"));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.key());
    let mut out = String::with_capacity(64 * (sorted.len() + 1));
    out.push_str(ExperimentRecord::CSV_HEADER);
    out.push('\n');
    for r in &sorted {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a CSV written by [`emit_csv`].
pub fn parse_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        row,
        msg,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(0, e.to_string()))?
        .clone();
    let expected: Vec<&str> = ExperimentRecord::CSV_HEADER.split(',').collect();
    let actual: Vec<&str> = headers.iter().collect();
    if actual != expected {
        return Err(parse_err(0, format!("unexpected header {actual:?}")));
    }
    let mut records = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let num = |idx: usize| -> Result<f64> {
            field(idx)
                .parse()
                .map_err(|_| parse_err(row, format!("bad number '{}'", field(idx))))
        };
        records.push(ExperimentRecord {
            dataset: field(0).to_string(),
            sponge_pct: num(1)? as u32,
            prune_type: PruneKind::parse(field(2))?,
            prune_pct: num(3)? as u32,
            test_acc: num(4)?,
            energy_ratio: num(5)?,
            proxy_energy: num(6)?,
            latency_ops: num(7)? as u64,
            wall_clock_s: num(8)?,
            seed: num(9)? as u64,
        });
    }
    if records.is_empty() {
        return Err(parse_err(0, "no records".to_string()));
    }
    Ok(records)
}
