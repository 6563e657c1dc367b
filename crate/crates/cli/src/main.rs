mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Axis, ProbeArgs};
use settings::{ConfigFile, SynthFlags, TrainFlags};

#[derive(Parser, Debug)]
#[command(name = "ctr-sink", version, about = "Behavior-level attention sinks for text CTR models")]
struct Cli {
    /// TOML file with [synth] and [train] tables; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a planted category-recency signal.
    Synth(SynthFlags),
    /// Train a model and optionally save a checkpoint.
    Train(TrainFlags),
    /// Score a dataset with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Seed for the random-signal control.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write one score per line.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Dump attention metrics, layer profiles and heatmaps.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Samples to measure, from the start of the file.
        #[arg(long, default_value_t = 32)]
        samples: usize,
        /// Samples whose heatmaps are exported.
        #[arg(long, default_value_t = 1)]
        heatmaps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train once per value of one axis and tabulate the results.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Extra held-out set scored with each trained model.
        #[arg(long)]
        test: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(flags) => {
            let (out, params, seed) = flags.over(file.synth).resolve()?;
            commands::synth(&out, &params, seed)?;
        }
        Command::Train(flags) => commands::train(&flags.over(file.train).resolve()?)?,
        Command::Eval {
            checkpoint,
            data,
            seed,
            scores,
        } => commands::eval(&checkpoint, &data, seed, scores.as_deref())?,
        Command::Probe {
            checkpoint,
            data,
            out,
            samples,
            heatmaps,
            seed,
        } => commands::probe(&ProbeArgs {
            checkpoint: &checkpoint,
            data: &data,
            out: &out,
            samples,
            heatmaps,
            seed,
        })?,
        Command::Sweep {
            axis,
            values,
            test,
            out,
            train,
        } => {
            if values.contains(&0) {
                return Err(CliError::Usage("sweep values must be positive".into()));
            }
            let mut base = train.over(file.train).resolve()?;
            base.checkpoint_out = None;
            base.log = None;
            commands::sweep(&base, axis, &values, test.as_deref(), out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
