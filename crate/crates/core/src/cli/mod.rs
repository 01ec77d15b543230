//! The `wlfusion` command line: one subcommand per pipeline stage, each
//! writing a fresh run directory with a manifest.

mod artifacts;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use artifacts::{load_backbone, load_model, DataDir, LangData, LoadedModel, ModelDescriptor};
pub use config::{load_config, resolve, Overrides, PipelineConfig, Resolved, Stage};
pub use manifest::{create_run_dir, sha256_file, sha256_path, RunManifest, MANIFEST};

use crate::evalkit::{Metric, Scope};
use crate::topics::TauRule;

/// Exit code for usage errors (unknown command or flag, bad value).
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures inside a command.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "wlfusion",
    version,
    about = "Check-worthiness detection with world-language task adapters and adapter fusion"
)]
pub struct Cli {
    /// Root for run directories of commands given no --out.
    #[arg(long, global = true, env = "WLFUSION_OUT", default_value = "runs")]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML pipeline config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to create (must be absent or empty).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[command(flatten)]
    pub optim: OptimFlags,
    /// Token budget per example, at most the backbone's.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Development metric for checkpoint selection.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Decision threshold on the check-worthy probability.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Language adapter used for languages without their own.
    #[arg(long)]
    pub la_fallback: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub la_fallback: Option<String>,
    /// Extra language-adapter runs available for swapping (repeatable).
    #[arg(long)]
    pub la: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multilingual corpus with its gold topic map.
    GenSynth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the vocabulary and pretrain a backbone with masked language modeling.
    PretrainBackbone {
        #[command(flatten)]
        run: RunArgs,
        /// Data directory (`<lang>.<split>.tsv`, `<lang>.unlabeled.txt`).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        optim: OptimFlags,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Train a language adapter on one language's unlabeled text.
    PretrainLa {
        #[command(flatten)]
        run: RunArgs,
        /// `pretrain-backbone` run directory.
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lang: String,
        #[command(flatten)]
        optim: OptimFlags,
    },
    /// Train a task adapter on one language, optionally over a frozen language adapter.
    TrainTa {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lang: String,
        /// `pretrain-la` run whose adapter sits below the task adapter.
        #[arg(long)]
        la: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train adapter fusion over trained task adapters.
    TrainFusion {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `train-ta` runs to fuse (repeat at least twice).
        #[arg(long, required = true, num_args = 1)]
        ta: Vec<PathBuf>,
        /// `pretrain-la` runs; with any given, each example passes through its language's adapter.
        #[arg(long)]
        la: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train any model kind from scratch (members included).
    TrainBaseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// FFT-single, TA-single, TA+LA-single, WL+FFT, WL+TA, WL+TA+LA, WL+AF, WL+AF+LA or Mean-ensemble.
        #[arg(long)]
        kind: String,
        /// Comma-separated source languages.
        #[arg(long, value_delimiter = ',', required = true)]
        sources: Vec<String>,
        #[arg(long)]
        la: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score test splits and write per-language metric rows.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Training run directory holding `model.json`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated languages (default: every test split in scope).
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
        #[arg(long, default_value = "all")]
        scope: Scope,
        /// `topical-split` run, required for the global and local scopes.
        #[arg(long)]
        topical: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Topic model, global/local evaluation sets and relation graph.
    TopicalSplit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of topics.
        #[arg(long)]
        k: Option<usize>,
        /// Outlier threshold: a percentile such as `p90` or a cosine distance.
        #[arg(long)]
        tau: Option<TauRule>,
        /// Topics of the outlier refit.
        #[arg(long)]
        refit_k: Option<usize>,
        /// Samples a topic needs in a dataset to count as present there.
        #[arg(long)]
        min_support: Option<usize>,
    },
    /// Average fusion weights per test language (heatmap CSV).
    Interpret {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Integrated-gradients token attributions for test examples.
    Attribute {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lang: String,
        /// Number of examples, from the start of the test split.
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Parameter and file sizes, training times, kappa and entity slices.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Training runs to size and time (repeatable).
        #[arg(long)]
        model: Vec<PathBuf>,
        /// Two prediction files to compare with Fleiss' kappa.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Vec<PathBuf>,
        /// Prediction files, one per seed, for entity-sliced F1.
        #[arg(long)]
        entity_preds: Vec<PathBuf>,
        /// Data directory with the entity-tagged test split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lang: Option<String>,
    },
}

impl clap::ValueEnum for Metric {
    fn value_variants<'a>() -> &'a [Self] {
        &[Metric::Map, Metric::F1]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Metric::Map => "map",
            Metric::F1 => "f1",
        }))
    }
}

impl clap::ValueEnum for Scope {
    fn value_variants<'a>() -> &'a [Self] {
        &[Scope::All, Scope::Global, Scope::Local, Scope::ZeroShot]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Scope::All => "all",
            Scope::Global => "global",
            Scope::Local => "local",
            Scope::ZeroShot => "zero-shot",
        }))
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.detail().replace('\n', " "));
            EXIT_FAILURE
        }
    }
}

/// Entry point of the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}
