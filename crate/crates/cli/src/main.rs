//! `gapkit` command-line front end.
//!
//! Reports go to stdout, or atomically to `--out`. Exit codes: 0 success,
//! 1 I/O failure, 2 invalid input or usage.

mod commands;
mod prompts;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "gapkit", version, about = "Modality-gap analysis toolkit")]
pub struct Cli {
    /// Report format. Not every command supports every format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,

    /// Write the report here (atomically) instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    MeanShift,
    Linear,
    CovNoise,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a corpus file against every invariant.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Paired and unpaired cosine statistics and the mean gap vector.
    GapStats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = gapkit::geometry::DEFAULT_UNPAIRED_SAMPLES)]
        samples: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Fit an adapter on a paired corpus and emit it as JSON.
    FitAdapter {
        #[arg(long, value_enum)]
        kind: FitKind,
        #[arg(long)]
        corpus: PathBuf,
        /// Ridge strength for `linear`.
        #[arg(long, default_value_t = gapkit::adapters::DEFAULT_RIDGE_LAMBDA)]
        ridge: f64,
        /// Diagonal jitter for `cov-noise`.
        #[arg(long, default_value_t = gapkit::adapters::DEFAULT_JITTER)]
        jitter: f64,
        /// Noise scale for `cov-noise`.
        #[arg(long, default_value_t = gapkit::adapters::DEFAULT_COV_SCALE)]
        scale: f64,
    },
    /// Run the text side of a corpus through an adapter file; writes a corpus.
    Apply {
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// PCA of centered difference vectors.
    Pca {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        components: usize,
    },
    /// Strongest Pearson correlations between difference-vector features.
    Correlations {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Shift conditions (none, rng:<m>, mean, neg_mean) with noise on top.
    Sensitivity {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "none,mean,neg_mean")]
        conditions: Vec<String>,
        #[arg(long, default_value_t = gapkit::adapters::DEFAULT_NOISE_W)]
        noise_w: f64,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long)]
        seed: u64,
        /// Training hyper-parameters as JSON; missing keys take defaults.
        #[arg(long)]
        train_config: Option<PathBuf>,
    },
    /// Generate a labelled synthetic corpus; writes a corpus.
    Synth {
        /// Corpus recipe as JSON; the committed standard recipe if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the recipe's seed.
        #[arg(long)]
        seed: u64,
    },
    /// Train on adapted text, evaluate on held-out text and images.
    Transfer {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated conditions, e.g. `none,noise:0.08,mean+noise:0.08,cov`.
        #[arg(long, value_delimiter = ',', required = true)]
        conditions: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        train_config: Option<PathBuf>,
    },
    /// Build keyword-conditioned prompts from reference captions (JSONL out).
    PromptBuild {
        /// Reference captions, one per line.
        #[arg(long)]
        captions: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// In-context examples per prompt.
        #[arg(long, default_value_t = 3)]
        examples: usize,
        #[arg(long, default_value = prompts::DEFAULT_INSTRUCTION)]
        instruction: String,
        /// Stop words, one per line; the built-in list if omitted.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Captions generated so far, one per line, counted before sampling.
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
    /// Pick one caption per prompt from generated candidates (JSONL out).
    PromptFilter {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// How often candidates contain their prompt's keywords.
    KeywordStats {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gapkit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
