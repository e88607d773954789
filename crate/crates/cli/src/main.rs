//! `spadseg` command-line tool.
//!
//! Every subcommand takes `--config FILE` (TOML, same keys as the
//! `config.resolved` it writes) and flags; flags win over the file. All
//! outputs go under `--out`.
//!
//! Exit codes: 0 ok, 2 usage or invalid configuration, 3 I/O, 4 malformed
//! or corrupt file, 5 mismatched inputs, 6 non-finite numerics.

mod bench;
mod compare;
mod config;
mod error;
mod evaluate;
mod predict;
mod simulate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spadseg::histproc::InputKind;
use spadseg::neuralseg::TrainConfig;

use crate::config::load;
use crate::error::{exit, CliResult};

#[derive(Parser, Debug)]
#[command(name = "spadseg", version, about = "Simulate, train and evaluate SPAD dToF object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled dataset of simulated histogram frames.
    Simulate(SimulateArgs),
    /// Train a segmentation model on one input kind.
    Train(TrainArgs),
    /// Write predicted masks and PPM renderings.
    Predict(PredictArgs),
    /// Score a model (or the ground truth, or freshly trained runs) on a test set.
    Evaluate(EvaluateArgs),
    /// Welch t-tests and paired detection tables across evaluate runs.
    Compare(CompareArgs),
    /// Time the histogram chain and network inference.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct Base {
    /// TOML file with the command's configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for every output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, t: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixes every frame's SBR target to this value.
    #[arg(long)]
    sbr_target: Option<f64>,
    /// Comma-separated class ids to draw objects from.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    kind: Option<InputKind>,
    /// Initialization and shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Add mirrored copies of every frame.
    #[arg(long)]
    augment: bool,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated dataset record indices (default: all).
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    base: Base,
    /// Test dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train `--runs` models on this dataset, then score each.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Score the ground truth against itself.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    kind: Option<InputKind>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    augment: bool,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    base: Base,
    /// An evaluate output directory; give two or more.
    #[arg(long = "eval")]
    evals: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Timed frames per measurement.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    net_frames: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated input kinds to time inference for.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<InputKind>>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn dispatch(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::Simulate(a) => {
            let mut c: config::SimulateConfig = load(a.base.config.as_deref())?;
            set_path(&mut c.out, a.base.out);
            set(&mut c.frames, a.frames);
            set(&mut c.seed, a.seed);
            set(&mut c.val_fraction, a.val_fraction);
            set(&mut c.generator.classes, a.classes);
            if let Some(s) = a.sbr_target {
                c.generator.sbr = [s, s];
            }
            simulate::run(&c)
        }
        Command::Train(a) => {
            let mut c: config::TrainRunConfig = load(a.base.config.as_deref())?;
            set_path(&mut c.out, a.base.out);
            set_path(&mut c.data, a.data);
            set(&mut c.kind, a.kind);
            if let Some(s) = a.seed {
                c.model_seed = s;
                c.train.seed = s;
            }
            c.augment |= a.augment;
            a.train.apply(&mut c.train);
            c.model.in_channels = c.kind.channels();
            train::run(&c)
        }
        Command::Predict(a) => {
            let mut c: config::PredictConfig = load(a.base.config.as_deref())?;
            set_path(&mut c.out, a.base.out);
            set_path(&mut c.checkpoint, a.checkpoint);
            set_path(&mut c.data, a.data);
            set(&mut c.frames, a.frames);
            predict::run(&c)
        }
        Command::Evaluate(a) => {
            let mut c: config::EvaluateConfig = load(a.base.config.as_deref())?;
            set_path(&mut c.out, a.base.out);
            set_path(&mut c.data, a.data);
            set_path(&mut c.checkpoint, a.checkpoint);
            set_path(&mut c.train_data, a.train_data);
            c.oracle |= a.oracle;
            c.augment |= a.augment;
            set(&mut c.kind, a.kind);
            set(&mut c.runs, a.runs);
            set(&mut c.seed, a.seed);
            set(&mut c.iou_threshold, a.iou_threshold);
            a.train.apply(&mut c.train);
            c.model.in_channels = c.kind.channels();
            evaluate::run(&c)
        }
        Command::Compare(a) => {
            let mut c: config::CompareConfig = load(a.base.config.as_deref())?;
            set_path(&mut c.out, a.base.out);
            if !a.evals.is_empty() {
                c.evals = a.evals;
            }
            compare::run(&c)
        }
        Command::Bench(a) => {
            let mut c: config::BenchConfig = load(a.base.config.as_deref())?;
            set_path(&mut c.out, a.base.out);
            set_path(&mut c.data, a.data);
            set_path(&mut c.checkpoint, a.checkpoint);
            set(&mut c.frames, a.frames);
            set(&mut c.warmup, a.warmup);
            set(&mut c.net_frames, a.net_frames);
            set(&mut c.repeats, a.repeats);
            set(&mut c.kinds, a.kinds);
            bench::run(&c)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
