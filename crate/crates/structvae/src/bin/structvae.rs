//! Command-line entry point. All logic lives in the library; this binary
//! parses flags, loads the run configuration, and maps errors to exit
//! codes (2 for configuration problems, 1 for runtime failures).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use structvae::report::{run, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "structvae",
    about = "Schema-driven tree-recursive VAEs for structured records",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set train.steps=20000 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Overwrite existing outputs in the run directory.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Parse a CSV corpus into the record cache and 8:1:1 split files.
    Ingest,
    /// Zip-coordinate p-value self-test statistics of the training split.
    Stats,
    /// Train a model and write metrics plus a checkpoint.
    Train,
    /// Generate samples from a checkpoint.
    Generate,
    /// Generation-quality metrics of a checkpoint (p-values, Levenshtein,
    /// generated loss).
    Eval,
    /// Repeated encode/decode diagnostics with per-round box-plot data.
    Repeat,
    /// Latent interpolation between two training examples, as GeoJSON.
    Interpolate,
}

impl From<&CliCommand> for Command {
    fn from(c: &CliCommand) -> Command {
        match c {
            CliCommand::Ingest => Command::Ingest,
            CliCommand::Stats => Command::Stats,
            CliCommand::Train => Command::Train,
            CliCommand::Generate => Command::Generate,
            CliCommand::Eval => Command::Eval,
            CliCommand::Repeat => Command::Repeat,
            CliCommand::Interpolate => Command::Interpolate,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("structvae: {e}");
            return ExitCode::from(2);
        }
    };
    match run(Command::from(&cli.command), &cfg, cli.force) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("structvae: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
