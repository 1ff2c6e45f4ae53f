//! `vcstar`: synthesize corpora, train, convert, evaluate and run ablations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
//! Log verbosity follows `VCSTAR_LOG` (`error` … `trace`, default `info`).

mod commands;
mod corpus;
mod manifest;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vcstar_core::models::ConditioningMode;
use vcstar_core::objectives::ObjectiveVariant;
use vcstar_core::training::AblationAxis;

#[derive(Debug, Parser)]
#[command(name = "vcstar", version, about = "Multi-domain feature conversion with conditional GANs")]
pub struct Cli {
    /// Training configuration JSON; replaces the preset when given.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for data synthesis or training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (output feature file for `convert`).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-domain corpus with parallel ground truth.
    Synthdata(SynthArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Convert one feature file between domains.
    Convert(ConvertArgs),
    /// Score a model against the corpus ground truth.
    Evaluate(EvaluateArgs),
    /// Train and score every variant of one ablation axis over three seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub domains: usize,
    /// Utterances per domain in each of the training and evaluation sets.
    #[arg(long, default_value_t = 8)]
    pub utterances: usize,
    #[arg(long, default_value_t = 256)]
    pub frames: usize,
    /// MCEP dimensions.
    #[arg(long, default_value_t = vcstar_core::features::DEFAULT_Q)]
    pub q: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Full => "full",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Conditioning {
    ChannelWise,
    ModulationBased,
}

impl From<Conditioning> for ConditioningMode {
    fn from(c: Conditioning) -> Self {
        match c {
            Conditioning::ChannelWise => Self::ChannelWise,
            Conditioning::ModulationBased => Self::ModulationBased,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Axis {
    Objective,
    Conditioning,
}

impl From<Axis> for AblationAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Objective => Self::Objective,
            Axis::Conditioning => Self::Conditioning,
        }
    }
}

/// Flags shared by commands that build a training configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Total iteration count (a resumed run continues up to this number).
    #[arg(long)]
    pub iterations: Option<u64>,
    /// CLS_ONLY, T_ADV, T_ADV_PLUS_CLS or ST_ADV.
    #[arg(long)]
    pub variant: Option<ObjectiveVariant>,
    #[arg(long, value_enum)]
    pub conditioning: Option<Conditioning>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory written by `synthdata` (or laid out the same way).
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint to continue from.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Periodic checkpoint interval; 0 disables periodic checkpoints.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Resolve and write the configuration without building any model.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Input feature file.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Source domain id (1-based).
    #[arg(long)]
    pub source: usize,
    /// Target domain id (1-based).
    #[arg(long)]
    pub target: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// `oracle`, `identity` or a checkpoint path.
    #[arg(long, default_value = "oracle")]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

/// Error raised for invalid flag combinations or configuration values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<vcstar_core::Error>() {
            return match e {
                vcstar_core::Error::NumericalAbort { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VCSTAR_LOG", "info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli, &args[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
