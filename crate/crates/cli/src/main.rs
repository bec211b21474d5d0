use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use corridor_cli::commands::{run, Command};
use corridor_cli::config::ScenarioConfig;
use corridor_cli::output::{to_json, write_atomic};
use corridor_cli::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(
    name = "corridor",
    version,
    about = "Design, analyze, simulate and verify pulse-modulated corridor controllers"
)]
struct Cli {
    /// Scenario file (TOML, or JSON starting with `{`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for report.json, CSV artifacts and manifest.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reserved; every computation is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Design the period, dose and modulation for the configured corridor.
    Design,
    /// Design, then simulate the closed (or open) loop.
    Simulate,
    /// Corridor extrema of a given period and dose.
    Analyze {
        #[arg(long)]
        period: f64,
        #[arg(long)]
        weight: f64,
    },
    /// Design, simulate and run the invariant checks.
    Verify,
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::parse("")?,
    };
    let command = match cli.command {
        Sub::Design => Command::Design,
        Sub::Simulate => Command::Simulate,
        Sub::Analyze { period, weight } => Command::Analyze { period, weight },
        Sub::Verify => Command::Verify,
    };
    let out = run(command, &cfg)?;
    let json = to_json(&out.report)?;
    if let Some(dir) = &cli.out {
        write_atomic(dir, "report.json", json.as_bytes())?;
        out.artifacts.flush(dir, command.name())?;
    }
    match cli.format {
        Format::Json => print!("{json}"),
        Format::Text => print!("{}", out.text),
    }
    Ok(out.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = execute(&cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
