//! `patchgt` command-line entry point.

mod commands;
mod fetch;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "patchgt",
    version,
    about = "Spectral patch graph transformer workflows"
)]
struct Cli {
    /// Worker threads for every parallel stage (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Corpus cache root.
    #[arg(long, global = true, env = "PATCHGT_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Every workflow. Resolved commands are stored verbatim in replay manifests.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Segment graphs into patches at one threshold.
    Segment {
        /// JSON graph file.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        input: Option<PathBuf>,
        /// Corpus name under the data directory, or a corpus path.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        gamma: f64,
        /// Reuse and store segmentations here.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Output JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two graphs under 1-WL colour refinement.
    WlCompare {
        /// JSON graph file; its first graph is used.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated training; writes run.json, config.json and one checkpoint per fold.
    Train {
        #[arg(long)]
        dataset: String,
        /// Fixes the threshold instead of searching the configured grid.
        #[arg(long)]
        gamma: Option<f64>,
        /// Training configuration JSON; defaults to the desk-scale TU setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluates a fold checkpoint on its test split.
    Eval {
        #[arg(long)]
        dataset: String,
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Over-squashing ratios on two-cluster regular graphs.
    Bottleneck {
        /// Grid JSON; defaults to the built-in grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-graph attention weights as JSON plus a DOT rendering of the coarse graph.
    AttentionExport {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Graph indices; defaults to the first `limit` graphs.
        #[arg(long = "graph")]
        graphs: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        limit: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every differentiable operation and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-runs a manifest and compares output hashes.
    #[serde(skip)]
    Replay { manifest: PathBuf },
    /// Downloads a TU corpus into the data directory.
    #[serde(skip)]
    Fetch {
        name: String,
        /// Local zip archive to unpack instead of downloading.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        url: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(cli.command, &cli.data_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
