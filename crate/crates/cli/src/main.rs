mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ssrb", version, about = "Single-shot spin readout benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a dotted config key, e.g. `--set noise.r=25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a labeled dataset file.
    Synth(commands::SynthArgs),
    /// Train a network (regime B, C or D) on a dataset file.
    Train(commands::TrainArgs),
    /// Write per-trace verdicts of a network or the Bayes filter.
    Classify(commands::ClassifyArgs),
    /// Error rate against SNR.
    SweepR(commands::SweepRArgs),
    /// Error rate against a constant signal offset.
    SweepOffset(commands::SweepOffsetArgs),
    /// Error rate against the tunnel-rate ratio.
    SweepGamma(commands::SweepGammaArgs),
    /// Rabi visibility per classifier.
    Rabi(commands::RabiArgs),
    /// Per-trace classification latency.
    Time(commands::TimeArgs),
    /// Tabulate the model noise spectrum as a PSD file.
    PsdModel(commands::PsdModelArgs),
    /// Fit both tunnel rates from the mean of the UP traces in a dataset.
    FitMean(commands::FitMeanArgs),
}

fn run() -> CliResult<()> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(());
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_owned();
            return Err(CliError::usage("argv", first.trim_start_matches("error: ")));
        }
    };
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Classify(a) => commands::classify(a),
        Command::SweepR(a) => commands::sweep_r(a),
        Command::SweepOffset(a) => commands::sweep_offset_cmd(a),
        Command::SweepGamma(a) => commands::sweep_gamma_cmd(a),
        Command::Rabi(a) => commands::rabi(a),
        Command::Time(a) => commands::time(a),
        Command::PsdModel(a) => commands::psd_model(a),
        Command::FitMean(a) => commands::fit_mean(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit as u8)
        }
    }
}
