//! `asn`: end-to-end pipeline for partition-aware post-processing and adaptive
//! model switching on toy-codec output.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod codec;
mod data;
mod eval;
mod ratelog;
mod settings;
mod train;

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "asn", version, about = "Partition-aware CNN post-processing toolkit")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 lets the runtime decide). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` file supplying defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Code frames with the toy codec; writes decoded frames, partitions and a rate log.
    Codec(codec::CodecArgs),
    /// Build a patch dataset (from frames on disk or a generated toy corpus).
    Dataset(data::DatasetArgs),
    /// Train (or fine-tune) one post-processing model.
    TrainSingle(train::TrainSingleArgs),
    /// Pre-train and iteratively refine an adaptive-switching bank.
    TrainAsn(train::TrainAsnArgs),
    /// Code, post-process and score frames with a model or a bank.
    Eval(eval::EvalArgs),
    /// BD-rate between two rate logs.
    Bdrate(eval::BdrateArgs),
    /// Write the partition masks of coded frames as images.
    MaskDump(codec::MaskDumpArgs),
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    let threads = settings.value("threads", cli.threads, 0usize)?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the worker pool")?;
    settings.forget("threads");
    let seed = settings.value("seed", cli.seed, 0u64)?;
    match cli.command {
        Command::Codec(a) => codec::run_codec(a, settings),
        Command::Dataset(a) => data::run_dataset(a, seed, settings),
        Command::TrainSingle(a) => train::run_train_single(a, seed, settings),
        Command::TrainAsn(a) => train::run_train_asn(a, seed, settings),
        Command::Eval(a) => eval::run_eval(a, settings),
        Command::Bdrate(a) => eval::run_bdrate(a, settings),
        Command::MaskDump(a) => codec::run_mask_dump(a, settings),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
