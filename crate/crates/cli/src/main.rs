//! `phenograph` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod manifest;
mod parallel;

/// Bad flags, config keys or config values; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "phenograph", version, about = "Phenotype-driven gene prioritization on knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat TOML file of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every random stream of the run.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Node TSV (`key<TAB>type<TAB>name`).
    #[arg(long)]
    nodes: PathBuf,
    /// Edge TSV (`src<TAB>relation<TAB>dst`).
    #[arg(long)]
    edges: PathBuf,
}

#[derive(Args, Clone)]
struct ScoringArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Patient JSONL.
    #[arg(long)]
    patients: PathBuf,
    /// Use the final parameters even when a best-validation snapshot exists.
    #[arg(long)]
    final_params: bool,
    /// Worker threads for per-patient work.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ties {
    ById,
    WorstCase,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph and train/test cohorts.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load graph and cohort files and report what was read.
    Ingest {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        cohort: Vec<PathBuf>,
        /// Fail on unresolved phenotypes or causal genes.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a model; writes checkpoints, a loss-trace CSV and a manifest.
    Train {
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training cohort JSONL.
        #[arg(long)]
        cohort: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Rank candidate genes per patient (JSONL).
    Predict {
        #[command(flatten)]
        scoring: ScoringArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract per-patient explanation graphs (JSONL, optional DOT).
    Extract {
        #[command(flatten)]
        scoring: ScoringArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write one DOT file per patient here.
        #[arg(long)]
        dot_dir: Option<PathBuf>,
    },
    /// Score predictions and/or patient graphs against a truth cohort.
    Evaluate {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        patient_graphs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value = "by-id")]
        ties: Ties,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Boost external gene scores with extracted patient graphs.
    Fuse {
        #[command(flatten)]
        graph: GraphArgs,
        /// External rankings JSONL, same layout as `predict` output.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        patient_graphs: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        delta: f64,
        /// Truth cohort; adds base and fused metric reports.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
