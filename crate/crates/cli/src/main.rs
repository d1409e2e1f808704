use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rvm_cli::{run, CliError, Pipeline, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "rvm", version, about = "Retarded Vlasov-Maxwell scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipelines of a scenario and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated subset of fields,radiation,energetics,evolve,verify (or `none`).
        #[arg(long)]
        pipeline: Option<String>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// Validate a scenario and print it in canonical form.
    Config {
        #[arg(long)]
        scenario: PathBuf,
        /// Print the JSON mirror instead of TOML.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("rvm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, CliError> {
    match cmd {
        Command::Run {
            scenario,
            pipeline,
            threads,
            out,
            tolerance_scale,
        } => {
            let sc = Scenario::load(&scenario)?;
            let opts = RunOptions {
                pipelines: pipeline.as_deref().map(Pipeline::parse_list).transpose()?,
                threads,
                out,
                tolerance_scale,
            };
            let outcome = run(sc, &opts)?;
            print!("{}", outcome.report.to_text());
            for c in outcome.report.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "rvm: check `{}` failed: {:.3e} exceeds {:.3e}",
                    c.name, c.value, c.tolerance
                );
            }
            Ok(if outcome.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Config { scenario, json } => {
            let sc = Scenario::load(&scenario)?;
            print!("{}", if json { sc.to_json() + "\n" } else { sc.to_toml() });
            Ok(ExitCode::SUCCESS)
        }
    }
}
