use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use critsds_cli::{registry, run, write_artifacts, CliError, RunOptions, ScenarioConfig, Status};

#[derive(Parser)]
#[command(name = "critsds", version, about = "Critical stochastic dynamical systems: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bundled scenario or a config file.
    Run {
        /// Bundled scenario name (see `list`).
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        scenario: Option<String>,
        /// Scenario TOML, or a previous diagnostics.json to rerun.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: critsds-out/<scenario>].
        #[arg(long, env = "CRITSDS_OUT")]
        out: Option<PathBuf>,
        /// Worker threads [default: all cores].
        #[arg(long, env = "CRITSDS_THREADS")]
        threads: Option<usize>,
        /// Reduced budgets for smoke tests and CI.
        #[arg(long)]
        quick: bool,
    },
    /// List bundled scenarios and the result each targets.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("critsds: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<u8, CliError> {
    match cmd {
        Command::List => {
            let rows = registry::list()?;
            let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
            let t = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
            for (name, target, desc) in rows {
                println!("{name:<w$}  {target:<t$}  {desc}");
            }
            Ok(0)
        }
        Command::Run { scenario, config, seed, out, threads, quick } => {
            let cfg = match (scenario, config) {
                (Some(name), _) => registry::scenario(&name)?,
                (None, Some(path)) => ScenarioConfig::load(&path)?,
                (None, None) => return Err(CliError::Config("give --scenario or --config".into())),
            };
            let dir = out
                .or_else(|| cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("critsds-out").join(&cfg.name));
            let output = run(&cfg, &RunOptions { seed, quick, threads })?;
            write_artifacts(&output, &dir)?;
            print!("{}", critsds_cli::runner::summary_text(&output));
            println!("artifacts in {}", dir.display());
            Ok(if output.status == Status::Fail { 1 } else { 0 })
        }
    }
}
