//! `mvpformer` command-line driver.
//!
//! Exit codes: 0 success, 1 a check or run failed, 2 usage error (bad
//! flags, missing or unreadable inputs).

mod bench;
mod data;
mod eval;
mod settings;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A run that completed but whose checks did not hold.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser, Debug)]
#[command(name = "mvpformer", version, about = "Multi-variate parallel attention toolkit")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "mvpformer-out")]
    pub out: PathBuf,
    /// `key=value` file, e.g. a previous run's manifest.txt.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model profile.
    #[arg(long, value_parser = ["toy", "small"])]
    pub profile: Option<String>,
    /// Also write gnuplot scripts next to plottable CSVs.
    #[arg(long)]
    pub emit_gnuplot: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic multichannel recordings (CSV + event sidecars).
    GenData(data::GenDataArgs),
    /// Run the invariant battery and write verify.csv.
    Verify(bench::VerifyArgs),
    /// Time naive against efficient attention logits and tally dot products.
    BenchAttn(bench::BenchArgs),
    /// Contrastive pre-training on recordings.
    Pretrain(train::PretrainArgs),
    /// LoRA fine-tuning of a checkpoint on labelled recordings.
    Finetune(train::FinetuneArgs),
    /// Score event or label files, or a fine-tuned checkpoint on recordings.
    Eval(eval::EvalArgs),
    /// Train and score a lookback/horizon forecaster.
    Forecast(train::ForecastArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::GenData(a) => data::gen_data(a),
        Command::Verify(a) => bench::verify(a),
        Command::BenchAttn(a) => bench::bench_attn(a),
        Command::Pretrain(a) => train::pretrain(a),
        Command::Finetune(a) => train::finetune(a),
        Command::Eval(a) => eval::eval(a),
        Command::Forecast(a) => train::forecast(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `(key, Some(value))` for a flag that was given.
pub fn flag<T: ToString>(key: &'static str, v: &Option<T>) -> (&'static str, Option<String>) {
    (key, v.as_ref().map(ToString::to_string))
}
