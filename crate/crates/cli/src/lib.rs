//! Command-line orchestration for the neurotext pipeline: configuration,
//! the `explain` command, experiment runners and report aggregation.

pub mod commands;
pub mod config;
pub mod report;

use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::Experiment;
use config::RunArgs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] neurotext::Error),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "neurotext", version, about = "Neuron-grounded explanations for CNN image classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain one image; writes the MR, text and activation dump.
    Explain { image: PathBuf },
    /// Run a faithfulness or stability experiment.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
        /// Replay file (covering, highlighting, masking, interventions, divergence).
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Summarize MR-to-text answer annotations.
    ReliabilityReport { answers: PathBuf },
    /// Check a replay file against the model.
    ValidateReplay { replay: PathBuf },
    /// Train the reference model on generated data and write its container.
    ExportModel {
        /// Container path to write.
        output: PathBuf,
        #[arg(long, default_value_t = neurotext::train::TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = neurotext::train::TrainConfig::default().train_per_class)]
        train_per_class: usize,
        #[arg(long, default_value_t = neurotext::train::TrainConfig::default().data_seed)]
        data_seed: u64,
        #[arg(long, default_value_t = neurotext::train::TrainConfig::default().init_seed)]
        init_seed: u64,
    },
    /// Generate a fixture dataset and a replay file under the output directory.
    MakeFixtures {
        #[arg(long, default_value_t = 20)]
        images_per_class: usize,
        #[arg(long, default_value_t = 99)]
        data_seed: u64,
    },
    /// List the top exemplar images of every filter in the layer.
    Exemplars,
}
