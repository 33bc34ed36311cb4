//! `lobforge`: ingest order-book tapes, embed them as images, build sample
//! sets, train forecasters, backtest the market maker and report.
//!
//! Log level comes from `LOBFORGE_LOG` (default `info`).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lobforge::{
    backtest::BacktestError, embedding::EmbedError, lob::LobError, metrics::MetricsError,
    models::ModelError, nn::NnError, par, sampling::SampleError,
};

use commands::Ctx;
use config::{ConfigError, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "lobforge", version, about = "Order-book image forecasting and market-making backtests")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean a raw snapshot tape (and optionally trades) into canonical JSONL.
    Ingest(commands::IngestArgs),
    /// Export snapshot frames as grayscale PNGs.
    Embed(commands::EmbedArgs),
    /// Build a sample set from a tape.
    Sample(commands::SampleArgs),
    /// Train an architecture on the training split of a sample set.
    Train(commands::TrainArgs),
    /// Forecast a split of a sample set with a checkpoint.
    Predict(commands::PredictArgs),
    /// Replay the market-making strategy on a tape.
    Backtest(commands::BacktestArgs),
    /// Correlate traded-volume changes across symbols.
    Analyze(commands::AnalyzeArgs),
    /// Collect JSON summaries and SVG charts into one HTML page.
    Report(commands::ReportArgs),
    /// Generate a deterministic synthetic tape.
    Synthetic(commands::SyntheticArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Embed(_) => "embed",
            Command::Sample(_) => "sample",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Backtest(_) => "backtest",
            Command::Analyze(_) => "analyze",
            Command::Report(_) => "report",
            Command::Synthetic(_) => "synthetic",
        }
    }
}

/// Exit codes by error class; clap itself exits with 2 on usage errors.
mod exit {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const DATA: u8 = 4;
    pub const SAMPLING: u8 = 5;
    pub const MODEL: u8 = 6;
    pub const BACKTEST: u8 = 7;
    pub const METRICS: u8 = 8;
    pub const IO: u8 = 9;
}

fn lob_code(e: &LobError) -> u8 {
    match e {
        LobError::Io { .. } => exit::IO,
        _ => exit::DATA,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return exit::CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<LobError>() {
            return lob_code(e);
        }
        if let Some(e) = cause.downcast_ref::<SampleError>() {
            return match e {
                SampleError::Lob(e) => lob_code(e),
                _ => exit::SAMPLING,
            };
        }
        if cause.is::<EmbedError>() {
            return exit::SAMPLING;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::Io { .. } => exit::IO,
                _ => exit::MODEL,
            };
        }
        if cause.is::<NnError>() {
            return exit::MODEL;
        }
        if cause.is::<BacktestError>() {
            return exit::BACKTEST;
        }
        if cause.is::<MetricsError>() {
            return exit::METRICS;
        }
        if cause.is::<std::io::Error>() {
            return exit::IO;
        }
    }
    exit::OTHER
}

/// The error chain joined with `: `, skipping causes whose text the
/// previous message already contains.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

fn run(cli: &Cli, cfg: RunConfig) -> anyhow::Result<()> {
    let ctx = Ctx { cfg, command: cli.command.name() };
    match &cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Embed(a) => commands::embed(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Backtest(a) => commands::backtest(&ctx, a),
        Command::Analyze(a) => commands::analyze(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Synthetic(a) => commands::synthetic(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOBFORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = RunConfig::resolve(&cli.overrides).map_err(anyhow::Error::from).and_then(|cfg| {
        match cfg.threads {
            0 => run(&cli, cfg),
            n => par::with_threads(n, || run(&cli, cfg)),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
