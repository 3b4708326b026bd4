//! Command-line front end for the `ebdoa` localization pipeline.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for unreadable or
//! malformed data files, 3 for numerical failures.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ebdoa::Error;

#[derive(Parser)]
#[command(
    name = "ebdoa",
    version,
    about = "Localize a sound source and its first-order reflections from HOA recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of reverberant HOA frames with truth labels.
    Gen {
        /// TOML file of generation settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed, overriding the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset path; a `.manifest` file is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the deconvolution network on a dataset.
    Train {
        /// Training dataset.
        #[arg(long)]
        data: PathBuf,
        /// TOML file with [model] and [train] sections; defaults apply
        /// when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for initialization and shuffling, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output model path; a `.history` file is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one record through a trained model and write its heatmap.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Record index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Heatmap output path.
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Score a localization method over a dataset against the stored truth.
    Eval {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Trained model, required when method is dcnn.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Also aggregate metrics per 0.1 s reverberation-time bucket.
        #[arg(long)]
        by_t60: bool,
        /// Write a machine-readable key=value report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a classical beamformer heatmap for one record.
    BaselineSps {
        #[arg(long, value_enum)]
        method: BaselineArg,
        #[arg(long)]
        data: PathBuf,
        /// Record index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Heatmap output path.
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Run the built-in numerical checks: gradients, the time/frequency
    /// covariance identity, and the classical-method oracles.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Pgm,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dcnn,
    EbMvdr,
    EbMusic,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    EbMvdr,
    EbMusic,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArg(_) | Error::InfeasibleRoom { .. } => 1,
        Error::Format { .. } | Error::Wav { .. } | Error::Io(_) | Error::Geometry { .. } => 2,
        Error::Numerical(_) => 3,
    }
}
