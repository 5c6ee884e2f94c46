use std::path::Path;

use ess_sizing::closed_forms::CapacityDistribution;
use ess_sizing::economics::{EconScenario, TariffBook};
use ess_sizing::simulator::{EtaMode, SimConfig};
use ess_sizing::source_model::Units;
use ess_sizing::{ConsumerClass, Engine, Population};
use serde::Deserialize;

use crate::error::CliError;

/// Environment variable naming a tariff book JSON file.
pub const TARIFF_ENV: &str = "ESS_TARIFF_BOOK";

/// Scenario file shared by every subcommand. Each subcommand reads only the
/// fields it needs and reports the first missing one.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub population: Option<Population>,
    pub grid_power: Option<f64>,
    pub storage: Option<f64>,
    pub epsilon: Option<f64>,
    /// Physical scale of one model power unit and one model time unit.
    pub units: Option<Units>,
    pub simulation: Option<SimulationSpec>,
    pub economics: Option<EconomicsSpec>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub horizon: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default)]
    pub eta_mode: EtaMode,
    pub warmup: Option<f64>,
    pub charge_rate_cap: Option<f64>,
    pub discharge_rate_cap: Option<f64>,
    pub capacity_law: Option<CapacityDistribution>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicsSpec {
    pub scenario: EconScenario,
    #[serde(default)]
    pub sizes: Vec<usize>,
    pub breakeven_cap: Option<usize>,
}

/// Parameter grid for `sweep`. Populations come from `counts` (over the
/// scenario's classes) or from `n_users` (single-class scenarios only).
/// Grid power is either absolute or per user.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n_users: Option<Vec<usize>>,
    pub counts: Option<Vec<Vec<usize>>>,
    pub grid_power: Option<Vec<f64>>,
    pub grid_power_per_user: Option<Vec<f64>>,
    pub epsilon: Option<Vec<f64>>,
    pub engines: Option<Vec<Engine>>,
}

fn one() -> f64 {
    1.0
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn population(&self) -> Result<&Population, CliError> {
        self.population.as_ref().ok_or_else(|| missing("population"))
    }

    pub fn classes(&self) -> Result<&[ConsumerClass], CliError> {
        Ok(self.population()?.classes())
    }

    pub fn grid_power(&self) -> Result<f64, CliError> {
        self.grid_power.ok_or_else(|| missing("grid_power"))
    }

    pub fn storage(&self) -> Result<f64, CliError> {
        self.storage.ok_or_else(|| missing("storage"))
    }

    pub fn epsilon(&self) -> Result<f64, CliError> {
        self.epsilon.ok_or_else(|| missing("epsilon"))
    }

    pub fn units(&self) -> Result<Units, CliError> {
        self.units.ok_or_else(|| missing("units"))
    }

    pub fn simulation(&self) -> Result<&SimulationSpec, CliError> {
        self.simulation.as_ref().ok_or_else(|| missing("simulation"))
    }

    pub fn economics(&self) -> Result<&EconomicsSpec, CliError> {
        self.economics.as_ref().ok_or_else(|| missing("economics"))
    }

    pub fn sweep(&self) -> Result<&SweepSpec, CliError> {
        self.sweep.as_ref().ok_or_else(|| missing("sweep"))
    }
}

impl SimulationSpec {
    pub fn config(&self, population: Population, grid_power: f64) -> SimConfig {
        SimConfig {
            efficiency: self.efficiency,
            eta_mode: self.eta_mode,
            warmup: self.warmup,
            charge_rate_cap: self.charge_rate_cap,
            discharge_rate_cap: self.discharge_rate_cap,
            capacity_law: self.capacity_law.clone(),
            ..SimConfig::new(population, grid_power, self.horizon, self.replications, self.seed)
        }
    }
}

fn missing(field: &str) -> CliError {
    CliError::Usage(format!("scenario is missing the '{field}' field"))
}

/// Tariff book from an explicit path, else from `ESS_TARIFF_BOOK`, else the
/// built-in defaults.
pub fn tariff_book(explicit: Option<&Path>) -> Result<TariffBook, CliError> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(TARIFF_ENV).filter(|v| !v.is_empty()).map(Into::into),
    };
    let Some(path) = path else {
        return Ok(TariffBook::default());
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read tariff book {}: {e}", path.display())))?;
    TariffBook::from_json(&text).map_err(|e| CliError::Parse(format!("tariff book {}: {e}", path.display())))
}
