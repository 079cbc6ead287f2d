use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kicklab_cli::{run, set_threads, CliError, ExperimentConfig, RECIPES};

#[derive(Parser)]
#[command(name = "kicklab", version, about = "Large-deviation experiments for randomly kicked systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the recipe named in the config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the available recipes.
    ListRecipes,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, threads } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = threads {
                set_threads(n)?;
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let manifest = run(&cfg, &dir)?;
            println!("{}: wrote {} files to {}", manifest.experiment, manifest.files.len(), dir.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let violations = cfg.validate();
            if violations.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(CliError::Invalid(violations))
            }
        }
        Command::ListRecipes => {
            for (name, about) in RECIPES {
                println!("{name:<14} {about}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
