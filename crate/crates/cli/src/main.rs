//! `opticnn` command-line driver.
//!
//! Exit status: 0 on success, 1 for usage or validation errors, 2 for I/O
//! errors.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use opticnn::cnn::{
    argmax_set, median_by_sigma, perturbation_experiment, predicted_class, toy_network, LayerGeometry, Network,
    SweepConfig, TrainConfig,
};
use opticnn::delayline::{plan_network_delays, plan_to_csv, simulate_repatching, table1_plan, DelayParams};
use opticnn::energy::{self, ArchTable, ElectronicParams, HybridParams, OpticalEnergyParams};
use opticnn::io::{format_significant, write_atomic, Dataset};
use opticnn::photonic::{factor_kernel, realize_kernel, KernelFactors, KernelMatrix, PatchStream};
use opticnn::reck::{extract_phases, perturb_phases, reconstruct_orthogonal, PhaseNoiseModel, PhaseSchedule, RealOrthogonal};
use opticnn::{Error, Execution, Matrix};

use config::ExperimentConfig;

/// Overrides the directory that relative `--output` paths resolve against.
const OUT_DIR_ENV: &str = "OPTICNN_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "opticnn", version, about = "Photonic CNN simulator")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run data-parallel loops on a single thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Orthogonal matrix (or any kernel with --factor) to phase schedule.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        /// Factor an arbitrary kernel matrix into U·Σ·V meshes.
        #[arg(long)]
        factor: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Phase schedule or kernel factors to a (noisy) matrix.
    Realize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the reference MNIST network.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        /// Held-out images used to report accuracy after training.
        #[arg(long, requires = "eval_labels")]
        eval_images: Option<PathBuf>,
        #[arg(long, requires = "eval_images")]
        eval_labels: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Classify a dataset and report accuracy.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Per-image predictions as CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Agreement with the clean network under phase noise.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Explicit noise levels (repeatable); overrides the log range.
        #[arg(long = "sigma")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 1e-5)]
        sigma_min: f64,
        #[arg(long, default_value_t = 0.3)]
        sigma_max: f64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Delay-line plan as CSV.
    Delays {
        #[arg(long, value_enum, conflicts_with = "weights")]
        preset: Option<DelayPreset>,
        /// Plan for the architecture stored in a weights file.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 3e9)]
        f: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Delay-bank simulation trace for one layer boundary.
    RepatchSim {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        kernel: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        dt: u64,
        /// Row delay in feed periods; defaults to the image width times dt.
        #[arg(long)]
        row_delay: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Energy report for an architecture table.
    Energy {
        #[arg(value_enum)]
        model: EnergyModel,
        #[arg(long, value_enum, default_value_t = ArchPreset::Alexnet)]
        preset: ArchPreset,
        /// Architecture table JSON (overrides the preset).
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// IDX images (gzip accepted by .gz suffix).
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DelayPreset {
    Table1,
    Toy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EnergyModel {
    Optical,
    Electronic,
    Hybrid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchPreset {
    Alexnet,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

type Result<T> = opticnn::Result<T>;

fn missing(flag: &str) -> Error {
    Error::InvalidParameter(format!("missing required {flag}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };

    match cli.command {
        Command::Decompose { input, factor, output } => {
            let m: Matrix = read_json(&input)?;
            let json = if factor {
                factor_kernel(&KernelMatrix::new(m)?)?.to_json()?
            } else {
                extract_phases(&RealOrthogonal::new(m)?).to_json()?
            };
            emit(output.as_deref(), json.as_bytes())
        }
        Command::Realize { input, sigma, seed, output } => {
            let seed = seed.or(cfg.seed).ok_or_else(|| missing("--seed"))?;
            let noise = PhaseNoiseModel::new(sigma, seed)?;
            let text = std::fs::read_to_string(&input)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let m = if value.get("u_schedule").is_some() {
                realize_kernel(&KernelFactors::from_json(&text)?, &noise).matrix().clone()
            } else {
                let s = PhaseSchedule::from_json(&text)?;
                reconstruct_orthogonal(&perturb_phases(&s, &noise)).into_matrix()
            };
            emit(output.as_deref(), serde_json::to_string(&m)?.as_bytes())
        }
        Command::Train { data, seed, epochs, batch_size, learning_rate, momentum, eval_images, eval_labels, output } => {
            let seed = seed.or(cfg.seed).ok_or_else(|| missing("--seed"))?;
            let ds = load_data(&data, &cfg)?;
            let section = cfg.train.clone().unwrap_or_default();
            let mut tc = TrainConfig::new(seed);
            tc.epochs = epochs.or(section.epochs).unwrap_or(tc.epochs);
            tc.batch_size = batch_size.or(section.batch_size).unwrap_or(tc.batch_size);
            tc.learning_rate = learning_rate.or(section.learning_rate).unwrap_or(tc.learning_rate);
            tc.momentum = momentum.or(section.momentum).unwrap_or(tc.momentum);
            tc.execution = exec;
            let outcome = opticnn::cnn::train_reference(&toy_network(), &ds.images, &ds.labels, &tc)?;
            eprintln!("initial loss {:.6}", outcome.initial_loss);
            for (i, l) in outcome.epoch_losses.iter().enumerate() {
                eprintln!("epoch {} loss {:.6}", i + 1, l);
            }
            if let (Some(i), Some(l)) = (eval_images, eval_labels) {
                let eval = Dataset::load(&i, &l)?;
                let (right, n) = accuracy(&outcome.network, &eval, exec)?;
                println!("accuracy {} ({right}/{n})", format_significant(right as f64 / n as f64, 4));
            }
            emit(Some(&output), outcome.network.to_json()?.as_bytes())
        }
        Command::Infer { data, weights, output } => {
            let net = load_network(weights.as_deref(), &cfg)?;
            let ds = load_data(&data, &cfg)?;
            let scores = net.infer_batch(&ds.images, exec)?;
            let mut csv = String::from("index,label,predicted\n");
            let mut right = 0;
            for (i, (s, &label)) in scores.iter().zip(&ds.labels).enumerate() {
                let p = predicted_class(s);
                right += usize::from(p == label as usize);
                let _ = writeln!(csv, "{i},{label},{p}");
            }
            println!("accuracy {} ({right}/{})", format_significant(right as f64 / ds.len() as f64, 4), ds.len());
            match output {
                Some(o) => emit(Some(&o), csv.as_bytes()),
                None => Ok(()),
            }
        }
        Command::Sweep { data, weights, seed, sigmas, sigma_min, sigma_max, points, trials, output } => {
            let seed = seed.or(cfg.seed).ok_or_else(|| missing("--seed"))?;
            let trials = trials.or(cfg.trials).unwrap_or(20);
            let mut sc = if !sigmas.is_empty() {
                SweepConfig { sigmas, trials, seed, execution: exec }
            } else if let Some(s) = cfg.sigmas.clone() {
                SweepConfig { sigmas: s, trials, seed, execution: exec }
            } else {
                SweepConfig::log_spaced(sigma_min, sigma_max, points, trials, seed)?
            };
            sc.execution = exec;
            let net = load_network(weights.as_deref(), &cfg)?;
            let ds = load_data(&data, &cfg)?;
            let rows = perturbation_experiment(&net, &ds.images, &sc)?;
            let mut csv = String::from("sigma,trial,agreement\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{}", format_significant(r.sigma, 10), r.trial, format_significant(r.agreement, 10));
            }
            for (s, m) in median_by_sigma(&rows) {
                eprintln!("sigma {} median agreement {}", format_significant(s, 4), format_significant(m, 4));
            }
            emit(output.as_deref(), csv.as_bytes())
        }
        Command::Delays { preset, weights, f, output } => {
            let rows = match (preset, weights) {
                (Some(DelayPreset::Table1), _) => table1_plan(f)?,
                (Some(DelayPreset::Toy), _) => plan_network_delays(&toy_network(), f)?,
                (None, w) => plan_network_delays(load_network(w.as_deref(), &cfg)?.spec(), f)?,
            };
            emit(output.as_deref(), plan_to_csv(&rows).as_bytes())
        }
        Command::RepatchSim { width, kernel, stride, channels, dt, row_delay, output } => {
            let g = LayerGeometry::new(width, kernel, stride, 0, channels, 1)?;
            let params = DelayParams::new(dt, row_delay.unwrap_or(width as u64 * dt), 1.0)?;
            // Each value is its own emission index so the trace shows which
            // pixels were gathered.
            let values = (0..width * width * channels).map(|v| v as f64).collect();
            let outputs = PatchStream::from_flat(channels, values)?;
            let trace = simulate_repatching(&outputs, &g, &params)?;
            emit(output.as_deref(), trace.to_json()?.as_bytes())
        }
        Command::Energy { model, preset, arch, format, output } => {
            let table: Option<ArchTable> = match arch {
                Some(p) => Some(read_json(&p)?),
                None => cfg.arch.clone(),
            };
            let ArchPreset::Alexnet = preset;
            let report = match model {
                EnergyModel::Optical => energy::optical_energy(
                    &table.unwrap_or_else(energy::alexnet_optical),
                    &cfg.optical.unwrap_or_else(OpticalEnergyParams::published),
                )?,
                EnergyModel::Electronic => energy::electronic_report(
                    &table.unwrap_or_else(energy::alexnet),
                    &cfg.electronic.unwrap_or_else(ElectronicParams::published),
                )?,
                EnergyModel::Hybrid => energy::hybrid_energy(
                    &table.unwrap_or_else(energy::alexnet),
                    &cfg.hybrid.unwrap_or_else(HybridParams::published),
                )?,
            };
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            let body = match format {
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json()?,
            };
            emit(output.as_deref(), body.as_bytes())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn load_data(args: &DataArgs, cfg: &ExperimentConfig) -> Result<Dataset> {
    let images = args.images.clone().or(cfg.images.clone()).ok_or_else(|| missing("--images"))?;
    let labels = args.labels.clone().or(cfg.labels.clone()).ok_or_else(|| missing("--labels"))?;
    let ds = Dataset::load(&images, &labels)?;
    Ok(match args.limit.or(cfg.limit) {
        Some(n) => ds.truncate(n),
        None => ds,
    })
}

fn load_network(flag: Option<&Path>, cfg: &ExperimentConfig) -> Result<Network> {
    let path = flag.map(Path::to_path_buf).or(cfg.weights.clone()).ok_or_else(|| missing("--weights"))?;
    Network::from_json(&std::fs::read_to_string(path)?)
}

fn accuracy(net: &Network, ds: &Dataset, exec: Execution) -> Result<(usize, usize)> {
    let scores = net.infer_batch(&ds.images, exec)?;
    let right = scores.iter().zip(&ds.labels).filter(|(s, &l)| argmax_set(s).first() == Some(&(l as usize))).count();
    Ok((right, ds.len()))
}

/// Writes to `path` (relative paths go under the output-directory override
/// when set) or to stdout.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            let target = match std::env::var_os(OUT_DIR_ENV) {
                Some(dir) if p.is_relative() => PathBuf::from(dir).join(p),
                _ => p.to_path_buf(),
            };
            write_atomic(&target, bytes)
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            if !bytes.ends_with(b"\n") {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}
