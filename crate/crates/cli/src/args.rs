use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ufw", version, about = "Quality filtering for pretraining corpora")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// error, warn, info, debug or trace. Falls back to UFW_LOG.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// Worker threads for filter and stats [default: logical CPUs].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize text (plain or JSONL documents).
    Normalize(IoArgs),
    /// Print the tokens of each input.
    Tokenize(TokenizeArgs),
    /// Train or apply the quality classifier.
    #[command(subcommand)]
    Classifier(ClassifierCommand),
    /// Manage versioned seed pools.
    #[command(subcommand)]
    Seedpool(SeedpoolCommand),
    /// Score corpora, intersect keep-manifests, length statistics.
    #[command(subcommand)]
    Filter(FilterCommand),
    /// Plan verification runs and compare benchmark scores.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Drive the multi-round workflow.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
}

#[derive(Debug, Args)]
pub struct IoArgs {
    /// Input file; standard input when omitted.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Treat the input as JSONL documents and process their text field.
    #[arg(long)]
    pub jsonl: bool,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Normalize before tokenizing.
    #[arg(long)]
    pub normalize: bool,
    /// Print token counts instead of tokens.
    #[arg(long)]
    pub count: bool,
}

#[derive(Debug, Subcommand)]
pub enum ClassifierCommand {
    /// Train from `__label__<name> text` lines or JSONL {"label","text"}.
    Train(TrainArgs),
    /// Score JSONL documents.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub word_ngrams: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub bucket: Option<usize>,
    /// Train on the text as given, without normalization.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolarityArg {
    Positive,
    Negative,
}

#[derive(Debug, Subcommand)]
pub enum SeedpoolCommand {
    /// Add a category of JSONL documents as a new pool version.
    Add {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, value_enum)]
        polarity: PolarityArg,
        #[arg(long, default_value = "")]
        source: String,
        #[arg(long, short)]
        input: PathBuf,
    },
    /// Flag a category as underrepresented with a resample factor of 3 to 5.
    Mark {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, value_enum)]
        polarity: Option<PolarityArg>,
        #[arg(long)]
        factor: u32,
    },
    /// Write a balanced training set as JSONL.
    Assemble {
        #[arg(long)]
        pool: PathBuf,
        /// Pool version [default: latest].
        #[arg(long)]
        version: Option<u64>,
        #[arg(long, default_value_t = 600_000)]
        target: usize,
        #[arg(long, default_value_t = 0.5)]
        balance: f64,
        #[arg(long, short)]
        output: PathBuf,
        /// Write raw text instead of normalized text.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Print a pool manifest and its lineage as JSON.
    Show {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        version: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FilterCommand {
    /// Score shards and split them into kept and rejected outputs.
    Score {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Shard files or glob patterns.
        #[arg(required = true)]
        shards: Vec<String>,
    },
    /// Intersect keep-manifests of the same corpus.
    Intersect {
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
    },
    /// Token-length distribution of shards.
    Stats {
        /// Comma-separated, strictly increasing bin edges.
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<u64>>,
        /// Count tokens of the raw text.
        #[arg(long)]
        no_normalize: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(required = true)]
        shards: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoundingArg {
    AsWrittenMax,
    NearestCanonical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
    Markdown,
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Plan an annealing run for a candidate dataset.
    Plan(PlanArgs),
    /// Compare benchmark scores of a candidate run against a baseline.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        grouping: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        /// Verdict margin in percentage points.
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// JSON list of {"shard","tokens"} for the candidate data.
    #[arg(long, conflicts_with = "candidate_shards")]
    pub candidate: Option<PathBuf>,
    /// JSONL shards of candidate data, token-counted with the configured tokenizer.
    #[arg(long, num_args = 1..)]
    pub candidate_shards: Vec<PathBuf>,
    /// JSON list of {"shard","tokens"} for the default mixture.
    #[arg(long, required_unless_present = "steps_only")]
    pub default: Option<PathBuf>,
    #[arg(long)]
    pub n_epoch: Option<u32>,
    #[arg(long, value_enum)]
    pub rounding_mode: Option<RoundingArg>,
    #[arg(long)]
    pub candidate_weight_bp: Option<u32>,
    #[arg(long)]
    pub global_batch_size: Option<u64>,
    #[arg(long)]
    pub sequence_length: Option<u64>,
    /// Report the step count only, without a schedule.
    #[arg(long)]
    pub steps_only: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Create a run directory from a pipeline config.
    Init {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        pipeline_config: PathBuf,
    },
    /// Run automatic steps until a report is needed or the run ends.
    Advance {
        #[arg(long)]
        run_dir: PathBuf,
        /// Perform a single transition.
        #[arg(long)]
        step: bool,
    },
    /// Record benchmark scores for the current round.
    IngestReport {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Print the run state without taking the writer lock.
    Status {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Check the journal and artifacts, repair a torn journal tail, and print the state.
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
    },
}
