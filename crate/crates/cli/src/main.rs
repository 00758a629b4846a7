//! `gridner`: JSONL pipeline over the gridner library.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gridner",
    version,
    about = "Tweet normalization, grid NER codec, toy training, ensembling and evaluation"
)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct InOut {
    /// Input file, `-` for stdin.
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    /// Output file, `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Limits {
    #[arg(long, default_value_t = 32)]
    pub max_entity_tokens: usize,
    #[arg(long, default_value_t = 100)]
    pub max_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Focal,
    Ce,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize the "text" of each record, carrying entity spans along.
    Normalize {
        #[command(flatten)]
        io: InOut,
        /// Emoji map TSV; defaults to $GRIDNER_EMOJI_MAP, then the bundled map.
        #[arg(long)]
        emoji_map: Option<PathBuf>,
    },
    /// Add a "tokens" field to each record.
    Tokenize {
        #[command(flatten)]
        io: InOut,
    },
    /// NER records to grid documents.
    GridEncode {
        #[command(flatten)]
        io: InOut,
    },
    /// Grid or score documents to decoded entities.
    GridDecode {
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        limits: Limits,
    },
    /// Mean-pool score documents position by position.
    GridFuse {
        /// Score files, one per model.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Stratified k-fold split of a classification file.
    Folds {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Balance classes by resampling the minority class.
    Oversample {
        #[command(flatten)]
        io: InOut,
    },
    /// Train the hashed logistic model and write a checkpoint.
    Train(TrainArgs),
    /// Write {"id","prob"} for each record.
    Predict {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        model: PathBuf,
        /// Use the raw weights instead of the EMA weights.
        #[arg(long)]
        raw_weights: bool,
    },
    /// Mean-pool prediction files by id.
    Fuse {
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Positive-class precision, recall and F1.
    EvalCls {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Strict-match NER precision, recall and F1.
    EvalNer {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Synthetic imbalanced classification records.
    GenSynth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.176)]
        pos_rate: f64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub io: InOut,
    /// Fold file from `folds`; requires --exclude-fold.
    #[arg(long, requires = "exclude_fold")]
    pub folds: Option<PathBuf>,
    #[arg(long, requires = "folds")]
    pub exclude_fold: Option<usize>,
    #[arg(long, value_enum, default_value_t = LossKind::Focal)]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr_backbone: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr_head: f64,
    #[arg(long, default_value_t = 0.01)]
    pub wd_backbone: f64,
    #[arg(long, default_value_t = 0.0)]
    pub wd_head: f64,
    #[arg(long, default_value_t = 0.99)]
    pub ema_decay: f64,
    #[arg(long)]
    pub oversample: bool,
    /// Hashed feature dimension (power of two).
    #[arg(long, default_value_t = gridner::toymodel::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridner: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
