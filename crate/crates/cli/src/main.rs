mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kge_core::ModelKind;

#[derive(Parser)]
#[command(
    name = "kge",
    version,
    about = "Train and evaluate tensor-factorization knowledge graph embeddings"
)]
struct Cli {
    /// Worker threads for scoring and gradients (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset directory, report statistics and write cleaned splits.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Rank a split against a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Score a single named triple.
    Score(ScoreArgs),
    /// Build and verify an exact embedding for a ground-truth file.
    Oracle(OracleArgs),
    /// Remove training triples implied by others under a rule file.
    Dedupe(DedupeArgs),
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for vocabularies and de-duplicated splits.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with training settings; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub neg: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Rule file whose ties are applied before training.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Split {
    Test,
    Valid,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Write per-triple ranks to this CSV file.
    #[arg(long)]
    pub per_triple: Option<PathBuf>,
    /// Write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub head: String,
    #[arg(long)]
    pub relation: String,
    #[arg(long)]
    pub tail: String,
    /// Expected model kind; an error if the checkpoint holds another.
    #[arg(long, value_parser = parse_kind)]
    pub model_kind: Option<ModelKind>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Grid,
    Incremental,
    Min,
}

#[derive(Args)]
pub struct OracleArgs {
    /// Ground-truth file: `|E| |R|` then one `h r t` line per true triple.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "min")]
    pub method: Method,
}

#[derive(Args)]
pub struct DedupeArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: kge_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }

    let seed = cli.seed;
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a, seed),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Score(a) => commands::score(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Dedupe(a) => commands::dedupe(&a, seed.unwrap_or(0)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

impl From<Method> for kge_core::expressivity::Construction {
    fn from(m: Method) -> Self {
        use kge_core::expressivity::Construction;
        match m {
            Method::Grid => Construction::Grid,
            Method::Incremental => Construction::Incremental,
            Method::Min => Construction::Min,
        }
    }
}
