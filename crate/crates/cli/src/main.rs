//! `spongelab` — train, poison, prune, and measure small classifiers.
//!
//! Exit codes: 0 success, 2 validation error, 3 I/O error, 4 internal
//! numerical error (NaN/Inf detected).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spongelab_core::data::{self, Dataset, WindowSpec};
use spongelab_core::energy;
use spongelab_core::error::Error;
use spongelab_core::experiment::{self, GridSpec};
use spongelab_core::model::{MlpConfig, MlpModel};
use spongelab_core::pruning;
use spongelab_core::svg;
use spongelab_core::trainer::{self, SpongeConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "spongelab",
    version,
    about = "Energy-latency sponge poisoning and pruning defenses for small sensing classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier, optionally with density poisoning.
    Train(TrainArgs),
    /// Prune a trained model without retraining.
    Prune(PruneArgs),
    /// Evaluate accuracy and energy/latency proxies of a model.
    Eval(EvalArgs),
    /// Run the full attack/defense grid.
    Grid(GridArgs),
    /// Render a trend chart from grid records.
    Plot(PlotArgs),
}

/// Shared dataset selection: `synth` or a CSV path.
#[derive(Args)]
struct DataArgs {
    /// `synth` for generated blobs, or a path to a CSV file.
    #[arg(long)]
    data: String,
    /// Name of the label column in CSV inputs.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Treat the CSV as a raw sensor series (session_id, label, channels)
    /// and cut sliding windows.
    #[arg(long)]
    series: bool,
    /// Window length for --series ingestion.
    #[arg(long, default_value_t = 32)]
    window_len: usize,
    /// Window stride for --series ingestion.
    #[arg(long, default_value_t = 16)]
    stride: usize,
    /// Samples per class for synthetic data.
    #[arg(long, default_value_t = 100)]
    synth_per_class: usize,
    /// Number of classes for synthetic data.
    #[arg(long, default_value_t = 6)]
    synth_classes: usize,
    /// Feature dimension for synthetic data.
    #[arg(long, default_value_t = 20)]
    synth_dim: usize,
    /// Blob standard deviation for synthetic data.
    #[arg(long, default_value_t = 1.0)]
    synth_spread: f64,
    /// Seed for synthetic data generation.
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, Error> {
        if self.data == "synth" {
            return data::synth_blobs(
                self.synth_per_class,
                self.synth_classes,
                self.synth_dim,
                self.synth_spread,
                self.synth_seed,
            );
        }
        let path = Path::new(&self.data);
        if self.series {
            let spec = WindowSpec {
                window_len: self.window_len,
                stride: self.stride,
                flatten: true,
            };
            data::window_series_csv(path, spec, &self.label_column)
        } else {
            data::load_feature_csv(path, &self.label_column)
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Percentage of training samples that carry the density reward.
    #[arg(long, default_value_t = 0)]
    sponge_pct: u32,
    /// Weight of the density reward.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Smoothing constant of the nonzero surrogate.
    #[arg(long, default_value_t = 1e-5)]
    sigma: f64,
    /// Output path for the trained model JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "32,16", value_delimiter = ',')]
    hidden_dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    test_split: f64,
    /// Poison whole gradient updates instead of individual samples.
    #[arg(long)]
    poison_per_update: bool,
    /// Optional path for the per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PruneMethodArg {
    Weight,
    Neuron,
}

#[derive(Args)]
struct PruneArgs {
    /// Input model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    method: PruneMethodArg,
    /// Prune percentage in 1..=99.
    #[arg(long)]
    rate: u32,
    /// Output path for the pruned model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Physically remove masked neurons after neuron pruning.
    #[arg(long)]
    compact: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV with the energy/latency report row.
    #[arg(long)]
    report: PathBuf,
    /// Evaluate on the test side of the seeded split used at training
    /// time instead of the whole dataset.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Test fraction when --split-seed is given.
    #[arg(long, default_value_t = 0.2)]
    test_split: f64,
    /// Repeats for the wall-clock latency measurement.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid specification JSON; omitted fields use built-in defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for records.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the spec's seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the spec's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Record wall-clock latency (makes records non-reproducible).
    #[arg(long)]
    measure_wall_clock: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Records CSV produced by the grid subcommand.
    #[arg(long)]
    records: PathBuf,
    /// One of test_acc, energy_ratio, latency_ops.
    #[arg(long)]
    metric: String,
    /// One of dataset, sponge_pct, prune_type, prune_pct, seed.
    #[arg(long)]
    group_by: String,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            if args.sponge_pct > 100 {
                return Err(Error::invalid("--sponge-pct must lie in 0..=100"));
            }
            let dataset = args.data.load()?;
            let mlp_cfg =
                MlpConfig::new(dataset.dim(), args.hidden_dims.clone(), dataset.num_classes)?;
            let train_cfg = TrainConfig {
                learning_rate: args.learning_rate,
                batch_size: args.batch_size,
                epochs: args.epochs,
                test_split: args.test_split,
                seed: args.seed,
                poison_per_update: args.poison_per_update,
                ..TrainConfig::default()
            };
            let sponge_cfg = SpongeConfig {
                lambda: args.lambda,
                sigma: args.sigma,
                poison_fraction: args.sponge_pct as f64 / 100.0,
            };
            let out = trainer::train_with_artifacts(&dataset, &mlp_cfg, &train_cfg, &sponge_cfg)?;
            out.model.save_json(&args.out)?;
            if let Some(history_path) = &args.history {
                let csv = trainer::history_to_csv(&out.history);
                std::fs::write(history_path, csv)
                    .map_err(|e| Error::io(history_path.display().to_string(), e))?;
            }
            let last = out.history.last().expect("at least one epoch");
            println!(
                "trained {} epochs on {} ({} train / {} test): train_acc {:.2} test_acc {:.2} mean_density {:.4}",
                args.epochs,
                dataset.name,
                out.train.len(),
                out.test.len(),
                last.train_acc,
                last.test_acc,
                last.mean_density
            );
            println!("model written to {}", args.out.display());
            Ok(())
        }
        Command::Prune(args) => {
            if args.rate == 0 || args.rate >= 100 {
                return Err(Error::invalid("--rate must lie in 1..=99"));
            }
            let model = MlpModel::load_json(&args.model)?;
            let config = pruning::PruneConfig {
                method: match args.method {
                    PruneMethodArg::Weight => pruning::PruneMethod::Weight,
                    PruneMethodArg::Neuron => pruning::PruneMethod::Neuron,
                },
                rate: args.rate as f64 / 100.0,
            };
            let mut pruned = config.apply(&model)?;
            if args.compact {
                pruned = pruning::compact(&pruned)?;
            }
            pruned.save_json(&args.out)?;
            println!("pruned model written to {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let model = MlpModel::load_json(&args.model)?;
            let dataset = args.data.load()?;
            let probe = match args.split_seed {
                Some(seed) => {
                    let (mut train, mut test) = data::split(&dataset, args.test_split, seed)?;
                    data::standardize(&mut train, &mut test)?;
                    test
                }
                None => {
                    let mut whole = dataset.clone();
                    let mut copy = dataset;
                    data::standardize(&mut whole, &mut copy)?;
                    whole
                }
            };
            let acc = model.accuracy(&probe.features, &probe.labels)?;
            let mut report = energy::energy_proxy(&model, &probe.features)?;
            report.wall_clock_seconds =
                energy::wall_clock_latency(&model, &probe.features, args.repeats)?;
            let csv = format!(
                "{}\n{}\n",
                energy::EnergyReport::CSV_HEADER,
                report.csv_row()
            );
            std::fs::write(&args.report, csv)
                .map_err(|e| Error::io(args.report.display().to_string(), e))?;
            println!("test_acc {acc:.2}");
            println!(
                "mean_density {:.4} energy_ratio {:.4} proxy_energy {} latency_ops {}",
                report.mean_density, report.energy_ratio, report.proxy_energy, report.latency_ops
            );
            println!("report written to {}", args.report.display());
            Ok(())
        }
        Command::Grid(args) => {
            let dataset = args.data.load()?;
            let mut spec = match &args.spec {
                Some(path) => GridSpec::load_json(path)?,
                None => GridSpec::default(),
            };
            if let Some(seeds) = args.seeds {
                spec.seeds = seeds;
            }
            if let Some(epochs) = args.epochs {
                spec.train.epochs = epochs;
            }
            if args.measure_wall_clock {
                spec.measure_wall_clock = true;
            }
            std::fs::create_dir_all(&args.out_dir)
                .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
            let records_path = args.out_dir.join("records.csv");
            let partial_path = args.out_dir.join("records.csv.partial");
            let records = experiment::run_grid(&spec, &dataset, Some(&partial_path))?;
            experiment::emit_csv(&records, &records_path)?;
            println!(
                "{} records ({} per seed x {} seeds) written to {}",
                records.len(),
                spec.records_per_seed(),
                spec.seeds.len(),
                records_path.display()
            );
            Ok(())
        }
        Command::Plot(args) => {
            let records = experiment::parse_records(&args.records)?;
            svg::emit_trend_svg(&records, &args.metric, &args.group_by, &args.out)?;
            println!("chart written to {}", args.out.display());
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ShapeMismatch { .. } | Error::InvalidArgument(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::Grid { source, .. } => exit_code(source),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
