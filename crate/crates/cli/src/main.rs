//! `ess-sizing`: command-line front end for the storage sizing engines.
//!
//! Every subcommand reads a scenario JSON file and writes CSV (default) or
//! JSON to standard output or `--output`. Exit status is 0 on success, 1 on
//! an engine failure and 2 on a usage or configuration error.

mod commands;
mod error;
mod scenario;
mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ess_sizing::Engine;

use commands::Scale;
use error::CliError;
use scenario::Scenario;

#[derive(Debug, Parser)]
#[command(name = "ess-sizing", version, about = "Shared energy-storage sizing for On/Off consumer populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Write to this file instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Interpret powers and energies in model units or in kW and kWh.
    #[arg(long, global = true, value_enum, default_value_t = UnitMode::Normalized)]
    units: UnitMode,

    /// Evaluation engine; `economics` defaults to effective_demand, the rest to spectral.
    #[arg(long, global = true, value_enum)]
    engine: Option<EngineArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smallest storage meeting the outage target at a given grid power.
    Size { scenario: PathBuf },
    /// Smallest grid power meeting the outage target at a given storage.
    Capacity { scenario: PathBuf },
    /// Per-class effective demand.
    Effdemand { scenario: PathBuf },
    /// Effective-demand admission test.
    Admit {
        scenario: PathBuf,
        /// Emit the two-class admission staircase instead of a single decision.
        #[arg(long)]
        region: bool,
    },
    /// Monte Carlo estimate of the deficit distribution.
    Simulate { scenario: PathBuf },
    /// Per-user monthly costs over a range of population sizes.
    Economics {
        scenario: PathBuf,
        /// Tariff book JSON; overrides the ESS_TARIFF_BOOK variable.
        #[arg(long)]
        tariff: Option<PathBuf>,
        /// Report the smallest population for which sharing beats the grid.
        #[arg(long)]
        breakeven: bool,
    },
    /// Storage size over a grid of populations, grid powers, targets and engines.
    Sweep { scenario: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UnitMode {
    Normalized,
    Physical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum EngineArg {
    Spectral,
    EffectiveDemand,
    ClosedForm,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Spectral => Engine::Spectral,
            EngineArg::EffectiveDemand => Engine::EffectiveDemand,
            EngineArg::ClosedForm => Engine::ClosedForm,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let Common {
        format,
        output,
        units,
        engine,
    } = cli.common;
    let path = match &cli.command {
        Command::Size { scenario }
        | Command::Capacity { scenario }
        | Command::Effdemand { scenario }
        | Command::Admit { scenario, .. }
        | Command::Simulate { scenario }
        | Command::Economics { scenario, .. }
        | Command::Sweep { scenario } => scenario,
    };
    let scenario = Scenario::load(path)?;
    let scale = match units {
        UnitMode::Normalized => Scale::normalized(),
        UnitMode::Physical => Scale::physical(scenario.units()?),
    };
    let engine_or = |default: Engine| engine.map_or(default, Engine::from);

    let report = match &cli.command {
        Command::Size { .. } => commands::size(&scenario, scale, engine_or(Engine::Spectral))?,
        Command::Capacity { .. } => commands::capacity(&scenario, scale, engine_or(Engine::Spectral))?,
        Command::Effdemand { .. } => commands::effdemand(&scenario, scale)?,
        Command::Admit { region, .. } => commands::admit(&scenario, scale, *region)?,
        Command::Simulate { .. } => commands::simulation(&scenario, scale)?,
        Command::Economics { tariff, breakeven, .. } => commands::economics(
            &scenario,
            engine_or(Engine::EffectiveDemand),
            tariff.as_deref(),
            *breakeven,
        )?,
        Command::Sweep { .. } => commands::sweep(&scenario, scale, engine_or(Engine::Spectral))?,
    };

    let mut out: Box<dyn Write> = match &output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Output(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    match format {
        Format::Csv => report.table.write_csv(&mut out)?,
        Format::Json => report.write_json(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
