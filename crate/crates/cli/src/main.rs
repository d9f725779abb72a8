use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ncpoisson::experiment::{self, TABLES};

/// Poisson limit experiments for nonconventional sums.
#[derive(Parser)]
#[command(name = "ncpoisson", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config and write CSV tables plus manifest.json into the output directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and report every fault.
    Validate { config: PathBuf },
    /// List the table names accepted in `outputs`.
    ListTables,
}

fn read(path: &PathBuf) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => read(&config).and_then(|text| {
            let output = experiment::run(&text)?;
            experiment::write_outputs(&output, &out)?;
            println!("wrote {} tables to {}", output.tables.len(), out.display());
            Ok(())
        }),
        Command::Validate { config } => read(&config).and_then(|text| {
            let prepared = experiment::validate(&text)?;
            println!("ok: config_hash {}", prepared.config_hash());
            Ok(())
        }),
        Command::ListTables => {
            for (name, description) in TABLES {
                println!("{name}\t{description}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
