use std::process::ExitCode;

use clap::Parser;
use neurotext::train::TrainConfig;
use neurotext_cli::commands::{
    cmd_experiment, cmd_exemplars, cmd_explain, cmd_export_model, cmd_make_fixtures, cmd_reliability_report,
    cmd_validate_replay,
};
use neurotext_cli::config::{Needs, RunConfig};
use neurotext_cli::{Cli, CliError, Command};

fn run(cli: Cli) -> Result<(), CliError> {
    let needs = match &cli.command {
        Command::Explain { .. } => Needs {
            pipeline: true,
            ..Needs::default()
        },
        Command::Experiment { which, .. } => Needs {
            model: true,
            dataset: which.needs_dataset(),
            pipeline: which.needs_pipeline(),
        },
        Command::ValidateReplay { .. } | Command::MakeFixtures { .. } => Needs {
            model: true,
            ..Needs::default()
        },
        Command::Exemplars => Needs {
            model: true,
            dataset: true,
            ..Needs::default()
        },
        Command::ReliabilityReport { .. } | Command::ExportModel { .. } => Needs::default(),
    };
    let config = RunConfig::validate(cli.run, needs)?;
    match cli.command {
        Command::Explain { image } => {
            let result = cmd_explain(&config, &image)?;
            let origin = if result.from_cache { " (cached)" } else { "" };
            for f in result.files {
                println!("{}{origin}", f.display());
            }
        }
        Command::Experiment { which, replay } => {
            for f in cmd_experiment(&config, which, replay.as_deref())? {
                println!("{}", f.display());
            }
        }
        Command::ReliabilityReport { answers } => {
            for f in cmd_reliability_report(&config, &answers)? {
                println!("{}", f.display());
            }
        }
        Command::ValidateReplay { replay } => {
            let n = cmd_validate_replay(&config, &replay)?;
            println!("{n} records valid");
        }
        Command::ExportModel {
            output,
            epochs,
            train_per_class,
            data_seed,
            init_seed,
        } => {
            let train = TrainConfig {
                epochs,
                train_per_class,
                data_seed,
                init_seed,
                ..TrainConfig::default()
            };
            let accuracy = cmd_export_model(&train, &output)?;
            println!("{}: test accuracy {accuracy:.4}", output.display());
        }
        Command::MakeFixtures {
            images_per_class,
            data_seed,
        } => {
            for f in cmd_make_fixtures(&config, images_per_class, data_seed)? {
                println!("{}", f.display());
            }
        }
        Command::Exemplars => println!("{}", cmd_exemplars(&config)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
