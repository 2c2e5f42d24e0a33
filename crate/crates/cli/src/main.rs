//! `jova`: featurize, split, train, evaluate and query affinity models.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "jova", version, about = "Multi-view self-attention models for drug-target binding affinity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Dataset loading options shared by several subcommands.
#[derive(Debug, Args)]
struct DataArgs {
    /// CSV with columns compound_id,smiles,target_id,sequence,affinity
    #[arg(long)]
    data: PathBuf,
    /// Affinity transform applied while loading: none or neglog10
    #[arg(long, default_value = "none")]
    transform: String,
    /// Drop compounds and targets with at most this many records
    #[arg(long)]
    threshold: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Featurize every record and write a feature cache
    Featurize {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Config file supplying views and featurizer settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model preset whose views are featurized
        #[arg(long)]
        preset: Option<String>,
    },
    /// Write a five-fold split manifest
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "warm")]
        scheme: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Manifest path; printed to stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated training over every scheme, seed and fold
    Train(commands::TrainArgs),
    /// Score a checkpoint on a dataset without changing it
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Restrict to the test records of `--fold` in this split manifest
        #[arg(long, requires = "fold")]
        split: Option<PathBuf>,
        #[arg(long, requires = "split")]
        fold: Option<usize>,
        /// Also write per-record predictions here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the affinity of one compound-target pair
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        smiles: String,
        #[arg(long)]
        sequence: String,
    },
    /// Rank the most influential segments of dataset pairs
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Pair as `compound_id,target_id`; repeatable
        #[arg(long, required = true)]
        pair: Vec<String>,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Segment norm used for ranking: l2 or l1
        #[arg(long, default_value = "l2")]
        norm: String,
        /// JSON-lines output; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank a compound library against one target
    Screen {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with compound_id (or id) and smiles columns
        #[arg(long)]
        compounds: PathBuf,
        #[arg(long)]
        target: String,
        /// Target sequence; looked up in --data when omitted
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Flag compounds scoring at or below this value
        #[arg(long)]
        threshold: Option<f64>,
        /// Ranked CSV; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics and draw scatter plots from a training output directory
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the input directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset CSV
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        compounds: usize,
        #[arg(long, default_value_t = 12)]
        targets: usize,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> error::Result<()> {
    use commands as c;
    match cli.command {
        Command::Featurize {
            data,
            out,
            config,
            preset,
        } => c::featurize(&data.into(), &out, config.as_deref(), preset.as_deref()),
        Command::Split { data, scheme, seed, out } => c::split(&data.into(), &scheme, seed, out.as_deref()),
        Command::Train(args) => c::train(&args),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            fold,
            out,
        } => c::evaluate(&checkpoint, &data.into(), split.as_deref().zip(fold), out.as_deref()),
        Command::Predict {
            checkpoint,
            smiles,
            sequence,
        } => c::predict(&checkpoint, &smiles, &sequence),
        Command::Explain {
            checkpoint,
            data,
            pair,
            topk,
            norm,
            out,
        } => c::explain(&checkpoint, &data.into(), &pair, topk, &norm, out.as_deref()),
        Command::Screen {
            checkpoint,
            compounds,
            target,
            sequence,
            data,
            threshold,
            out,
        } => c::screen(
            &checkpoint,
            &compounds,
            &target,
            sequence.as_deref(),
            data.as_deref(),
            threshold,
            out.as_deref(),
        ),
        Command::Report { input, out } => c::report(&input, out.as_deref().unwrap_or(&input)),
        Command::Synth {
            out,
            compounds,
            targets,
            pairs,
            noise,
            seed,
        } => c::synth(
            &out,
            jova_core::data::synthetic::SyntheticConfig {
                compounds,
                targets,
                pairs,
                noise,
                seed,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
