use std::path::Path;

use ess_sizing::closed_forms::{CapacityDistribution, CapacityPoint};
use ess_sizing::economics::{breakeven_population, cost_table, CostBreakdown, DEFAULT_BREAKEVEN_CAP};
use ess_sizing::effective_demand::{admissible, admission_region, effective_demand, DecayParameter};
use ess_sizing::simulator::simulate;
use ess_sizing::sizing::{epsilon_outage_capacity, min_grid_power, SizingResult};
use ess_sizing::source_model::Units;
use ess_sizing::{Engine, Population};
use rayon::prelude::*;

use crate::error::CliError;
use crate::scenario::{tariff_book, Scenario, SweepSpec};
use crate::table::{Cell, Report, Table};

/// Conversion between model units and the units used on the command line.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    units: Units,
    physical: bool,
}

impl Scale {
    pub fn normalized() -> Self {
        Scale {
            units: Units::normalized(),
            physical: false,
        }
    }

    pub fn physical(units: Units) -> Self {
        Scale { units, physical: true }
    }

    fn label(&self) -> &'static str {
        if self.physical {
            "physical"
        } else {
            "normalized"
        }
    }

    fn power_out(&self, x: f64) -> f64 {
        self.units.power_kw(x)
    }

    fn power_in(&self, kw: f64) -> f64 {
        kw / self.units.power_kw(1.0)
    }

    fn storage_out(&self, x: f64) -> f64 {
        self.units.storage_kwh(x)
    }

    fn storage_in(&self, kwh: f64) -> f64 {
        kwh / self.units.storage_kwh(1.0)
    }

    fn rate_out(&self, x: f64) -> f64 {
        self.units.rate_per_hour(x)
    }

    /// Decay rates are per unit of storage.
    fn decay_out(&self, zeta: f64) -> f64 {
        zeta / self.units.storage_kwh(1.0)
    }
}

fn report(command: &'static str, scale: Scale, table: Table) -> Report {
    Report {
        command,
        units: scale.label(),
        table,
        document: None,
    }
}

pub fn size(s: &Scenario, scale: Scale, engine: Engine) -> Result<Report, CliError> {
    let pop = s.population()?;
    let c = scale.power_in(s.grid_power()?);
    let eps = s.epsilon()?;
    let r = epsilon_outage_capacity(pop, c, eps, engine)?;
    let mut t = Table::new(&["N", "C", "epsilon", "B", "engine", "achieved", "iterations", "converged"]);
    t.push(vec![
        pop.total_users().into(),
        scale.power_out(c).into(),
        eps.into(),
        scale.storage_out(r.storage).into(),
        engine.name().into(),
        r.achieved.into(),
        r.iterations.into(),
        r.converged.into(),
    ]);
    Ok(report("size", scale, t))
}

pub fn capacity(s: &Scenario, scale: Scale, engine: Engine) -> Result<Report, CliError> {
    let pop = s.population()?;
    let b = scale.storage_in(s.storage()?);
    let eps = s.epsilon()?;
    let r = min_grid_power(pop, b, eps, engine)?;
    let mut t = Table::new(&["N", "B", "epsilon", "C", "engine", "achieved", "iterations", "converged"]);
    t.push(vec![
        pop.total_users().into(),
        scale.storage_out(b).into(),
        eps.into(),
        scale.power_out(r.grid_power).into(),
        engine.name().into(),
        r.achieved.into(),
        r.iterations.into(),
        r.converged.into(),
    ]);
    Ok(report("capacity", scale, t))
}

pub fn effdemand(s: &Scenario, scale: Scale) -> Result<Report, CliError> {
    let decay = DecayParameter::new(s.epsilon()?, scale.storage_in(s.storage()?))?;
    let mut t = Table::new(&["class_index", "lambda", "mu", "peak", "omega"]);
    for (i, class) in s.classes()?.iter().enumerate() {
        t.push(vec![
            i.into(),
            scale.rate_out(class.lambda).into(),
            scale.rate_out(class.mu).into(),
            scale.power_out(class.peak_demand).into(),
            scale.power_out(effective_demand(class, &decay)).into(),
        ]);
    }
    Ok(report("effdemand", scale, t))
}

pub fn admit(s: &Scenario, scale: Scale, region: bool) -> Result<Report, CliError> {
    let pop = s.population()?;
    let c = scale.power_in(s.grid_power()?);
    let b = scale.storage_in(s.storage()?);
    let eps = s.epsilon()?;
    if region {
        let mut t = Table::new(&["n1", "n2_max"]);
        for (n1, n2) in admission_region(pop.classes(), c, b, eps)? {
            t.push(vec![n1.into(), n2.into()]);
        }
        return Ok(report("admit", scale, t));
    }
    let d = admissible(pop, c, b, eps)?;
    let mut t = Table::new(&[
        "N",
        "C",
        "B",
        "epsilon",
        "effective_load",
        "margin",
        "admit",
        "strict_admit",
        "zeta",
    ]);
    t.push(vec![
        pop.total_users().into(),
        scale.power_out(c).into(),
        scale.storage_out(b).into(),
        eps.into(),
        scale.power_out(d.effective_load).into(),
        scale.power_out(d.margin).into(),
        d.admit.into(),
        d.strict_admit.into(),
        scale.decay_out(d.zeta).into(),
    ]);
    Ok(report("admit", scale, t))
}

pub fn simulation(s: &Scenario, scale: Scale) -> Result<Report, CliError> {
    let spec = s.simulation()?;
    let levels: Vec<f64> = spec.levels.iter().map(|&x| scale.storage_in(x)).collect();
    let mut cfg = spec.config(s.population()?.clone(), scale.power_in(s.grid_power()?));
    if let Some(law) = &cfg.capacity_law {
        let points = law
            .points()
            .iter()
            .map(|p| CapacityPoint {
                capacity: scale.power_in(p.capacity),
                probability: p.probability,
            })
            .collect();
        cfg.capacity_law = Some(CapacityDistribution::new(points)?);
    }
    let mut summary = simulate(&cfg, &levels)?;
    summary.levels = spec.levels.clone();
    summary.mean_deficit = scale.storage_out(summary.mean_deficit);
    summary.mean_square_deficit = scale.storage_out(scale.storage_out(summary.mean_square_deficit));
    let mut t = Table::new(&["level", "estimate", "std_error"]);
    for (i, &level) in summary.levels.iter().enumerate() {
        let se = summary.std_errors.as_ref().map(|v| v[i]);
        t.push(vec![level.into(), summary.estimates[i].into(), se.into()]);
    }
    Ok(Report {
        document: Some(serde_json::to_value(&summary)?),
        ..report("simulate", scale, t)
    })
}

fn breakdown_cells(b: &CostBreakdown) -> Vec<Cell> {
    vec![
        b.grid_energy.into(),
        b.storage_energy.into(),
        b.storage.into(),
        b.power_quality.into(),
        b.reliability.into(),
        b.grid_power.into(),
        b.storage_size.into(),
    ]
}

pub fn economics(
    s: &Scenario,
    engine: Engine,
    tariff: Option<&Path>,
    breakeven: bool,
) -> Result<Report, CliError> {
    let spec = s.economics()?;
    let book = tariff_book(tariff)?;
    let scenario = &spec.scenario;
    if breakeven {
        let cap = spec.breakeven_cap.unwrap_or(DEFAULT_BREAKEVEN_CAP);
        let b = breakeven_population(scenario, &book, &engine, cap)?;
        let mut t = Table::new(&["lambda", "n_users", "grid_only", "shared", "scanned", "monotone"]);
        t.push(vec![
            scenario.lambda.into(),
            b.n_users.into(),
            b.grid_only_cost.into(),
            b.shared_cost.into(),
            b.scanned.into(),
            b.monotone.into(),
        ]);
        return Ok(report("economics", Scale::normalized(), t));
    }
    let sizes = if spec.sizes.is_empty() {
        vec![scenario.n_users]
    } else {
        spec.sizes.clone()
    };
    let mut t = Table::new(&[
        "n",
        "grid_only",
        "ess_only",
        "shared",
        "shared_grid_energy",
        "shared_storage_energy",
        "shared_storage",
        "shared_power_quality",
        "shared_reliability",
        "shared_grid_power",
        "shared_storage_size",
    ]);
    for (n, [grid, ess, shared]) in sizes.iter().zip(cost_table(scenario, &book, &engine, &sizes)?) {
        let mut row: Vec<Cell> = vec![(*n).into(), grid.total.into(), ess.total.into(), shared.total.into()];
        row.extend(breakdown_cells(&shared));
        t.push(row);
    }
    Ok(report("economics", Scale::normalized(), t))
}

struct SweepPoint {
    population: Population,
    grid_power: f64,
    epsilon: f64,
    engine: Engine,
}

fn sweep_populations(s: &Scenario, spec: &SweepSpec) -> Result<Vec<Population>, CliError> {
    let base = s.population()?;
    match (&spec.n_users, &spec.counts) {
        (Some(_), Some(_)) => Err(CliError::Usage("sweep takes either 'n_users' or 'counts', not both".into())),
        (Some(sizes), None) => {
            let [class] = base.classes() else {
                return Err(CliError::Usage("sweep 'n_users' needs a single-class population".into()));
            };
            sizes
                .iter()
                .map(|&n| Ok(Population::single(class.clone(), n)?))
                .collect()
        }
        (None, Some(counts)) => counts
            .iter()
            .map(|c| Ok(Population::new(base.classes().to_vec(), c.clone())?))
            .collect(),
        (None, None) => Ok(vec![base.clone()]),
    }
}

fn sweep_powers(s: &Scenario, spec: &SweepSpec, pop: &Population, scale: Scale) -> Result<Vec<f64>, CliError> {
    match (&spec.grid_power, &spec.grid_power_per_user) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "sweep takes either 'grid_power' or 'grid_power_per_user', not both".into(),
        )),
        (Some(list), None) => Ok(list.iter().map(|&c| scale.power_in(c)).collect()),
        (None, Some(list)) => Ok(list
            .iter()
            .map(|&c| scale.power_in(c) * pop.total_users() as f64)
            .collect()),
        (None, None) => Ok(vec![scale.power_in(s.grid_power()?)]),
    }
}

/// Evaluates every grid point, in parallel, and emits rows in grid order:
/// population, then grid power, then epsilon, then engine.
pub fn sweep(s: &Scenario, scale: Scale, engine: Engine) -> Result<Report, CliError> {
    let spec = s.sweep()?;
    let epsilons = match &spec.epsilon {
        Some(list) => list.clone(),
        None => vec![s.epsilon()?],
    };
    let engines = spec.engines.clone().unwrap_or_else(|| vec![engine]);
    let mut points = Vec::new();
    for population in sweep_populations(s, spec)? {
        for grid_power in sweep_powers(s, spec, &population, scale)? {
            for &epsilon in &epsilons {
                for &engine in &engines {
                    points.push(SweepPoint {
                        population: population.clone(),
                        grid_power,
                        epsilon,
                        engine,
                    });
                }
            }
        }
    }
    let results: Vec<ess_sizing::Result<SizingResult>> = points
        .par_iter()
        .map(|p| epsilon_outage_capacity(&p.population, p.grid_power, p.epsilon, p.engine))
        .collect();
    let mut t = Table::new(&["N", "C", "epsilon", "B", "engine", "achieved"]);
    for (p, r) in points.iter().zip(results) {
        let r = r?;
        t.push(vec![
            p.population.total_users().into(),
            scale.power_out(p.grid_power).into(),
            p.epsilon.into(),
            scale.storage_out(r.storage).into(),
            p.engine.name().into(),
            r.achieved.into(),
        ]);
    }
    Ok(report("sweep", scale, t))
}
