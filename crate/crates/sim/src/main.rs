use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfedmoe::{run_file, RunOptions};

#[derive(Parser)]
#[command(name = "pfedmoe", version, about = "Model-heterogeneous personalized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its output bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for client updates; 1 is bit-exact.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Continue from a checkpoint written by the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        threads,
        resume,
    } = match Cli::try_parse() {
        Ok(cli) => cli.command,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        threads,
        resume,
        progress: true,
    };
    match run_file(&config, &out, &opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
