//! `cqd`: train link predictors, generate query sets, answer and evaluate
//! complex queries.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use cqd::model::CalibrationKind;
use cqd::querygen::QueryType;
use cqd::{ScorerKind, TNormKind};

const CONFIG_HELP: &str = "Every long flag is also a config key: pass `--config FILE` with `key = value` lines \
(`#` starts a comment). Command-line flags override the file; unknown keys are an error.";

#[derive(Parser, Debug)]
#[command(name = "cqd", version, about = "Answer logical queries over incomplete knowledge graphs")]
pub struct Cli {
    /// Worker threads for query-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Relative input paths are resolved against this directory.
    #[arg(long, global = true, env = "CQD_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train a link predictor over a grid of rank, batch size and regularizer.
    #[command(after_help = CONFIG_HELP, args_override_self = true)]
    Train(TrainArgs),
    /// Sample query files, one JSON line per query, for each structure.
    #[command(after_help = CONFIG_HELP, args_override_self = true)]
    GenerateQueries(GenerateArgs),
    /// Rank all entities for one query written in the query language.
    #[command(after_help = CONFIG_HELP, args_override_self = true)]
    Answer(AnswerArgs),
    /// Same as `answer --explain`.
    #[command(after_help = CONFIG_HELP, args_override_self = true)]
    Explain(AnswerArgs),
    /// Filtered ranking metrics on query files, optionally selecting
    /// per-structure settings on validation queries first.
    #[command(after_help = CONFIG_HELP, args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Write a clustered synthetic knowledge graph.
    #[command(after_help = CONFIG_HELP, args_override_self = true)]
    SynthKg(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with train.txt, valid.txt, test.txt as named triples (plus an
    /// optional vocab.json), or as ids next to entity2id.txt and relation2id.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, logs and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "complex")]
    pub scorer: ScorerKind,
    /// Embedding ranks to try.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub rank: Vec<usize>,
    /// Batch sizes to try.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub batch_size: Vec<usize>,
    /// Regularization coefficients to try.
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub reg: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the Gaussian initialization.
    #[arg(long, default_value_t = 1e-3)]
    pub init_scale: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Stop as soon as validation 1p H@3 reaches this value.
    #[arg(long)]
    pub target_valid_h3: Option<f64>,
    /// Score calibration stored with the checkpoint: logistic or minmax.
    #[arg(long, default_value = "logistic")]
    pub calibration: CalibrationKind,
    /// Logistic calibration temperature stored with the checkpoint.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Reject ranks, batch sizes and regularizers outside the standard grid.
    #[arg(long)]
    pub strict_grid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Valid,
    Test,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; files are named `<split>_<type>.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1p,2p,3p,2i,3i,ip,pi,2u,up")]
    pub types: Vec<QueryType>,
    /// Queries per structure.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Keep whatever was found when a structure runs out of fresh queries.
    #[arg(long)]
    pub allow_fewer: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Beam,
    Co,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
}

/// Settings shared by `answer` and `evaluate`.
#[derive(Args, Debug, Clone)]
pub struct MethodArgs {
    #[arg(long, default_value = "product")]
    pub tnorm: TNormKind,
    #[arg(long, default_value_t = 8)]
    pub beam_width: usize,
    /// Cap on partial substitutions kept per variable during beam search.
    #[arg(long)]
    pub max_states: Option<usize>,
    /// Adam learning rate for continuous optimisation.
    #[arg(long, default_value_t = 0.1)]
    pub co_lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub co_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub co_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub co_restarts: usize,
}

#[derive(Args, Debug)]
pub struct AnswerArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Graph directory; only its vocabulary is used.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Query text, e.g. `?A : exists V . acted_in(e, V) & genre(V, A)`.
    #[arg(long)]
    pub query: String,
    #[arg(long, value_enum, default_value = "beam")]
    pub method: MethodArg,
    #[command(flatten)]
    pub settings: MethodArgs,
    /// Number of entities to print.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Print the substitution and atom scores behind each answer.
    #[arg(long)]
    pub explain: bool,
    /// Known answers, comma separated; adds a correctness column.
    #[arg(long, value_delimiter = ',')]
    pub gold: Vec<String>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Override the checkpoint's logistic temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Also write the output and the resolved config to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Test query files or directories of `.jsonl` files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub test: Vec<PathBuf>,
    /// Validation query files; when given, the t-norm (and beam width) is
    /// chosen per structure by validation H@3.
    #[arg(long, value_delimiter = ',')]
    pub valid: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "beam,co")]
    pub methods: Vec<MethodArg>,
    #[command(flatten)]
    pub settings: MethodArgs,
    /// t-norms searched during selection.
    #[arg(long, value_delimiter = ',', default_value = "godel,product")]
    pub tnorms: Vec<TNormKind>,
    /// Score calibrations to try; with validation queries the best one is
    /// chosen per structure, otherwise the first is used.
    #[arg(long, value_delimiter = ',', default_value = "logistic")]
    pub calibrations: Vec<CalibrationKind>,
    /// Beam widths searched during selection.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64,128,256")]
    pub beam_widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub random_seed: u64,
    /// Output directory for reports, per-query logs and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 66)]
    pub clusters: usize,
    #[arg(long, default_value_t = 3)]
    pub cluster_size: usize,
    /// Fraction of edges held out, split evenly between valid and test.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
}

fn main() -> ExitCode {
    let root = Cli::command();
    let argv = match config::expand(&root, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let matches = root.clone().get_matches_from(argv);
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let resolved = config::resolved(&root, name, sub);
    match commands::run(&cli, &resolved) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
