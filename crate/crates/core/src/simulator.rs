//! Event-driven Monte Carlo of the consumer chain and the storage deficit.
//!
//! Between chain events the deficit moves linearly at the scaled net load
//! and is reflected at zero; there is no upper bound. Statistics are exact
//! integrals over each linear piece, so no time grid is involved.
//!
//! Replication `r` draws from a ChaCha8 stream keyed by `(seed, r)` and is
//! therefore independent of how replications are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_forms::CapacityDistribution;
use crate::error::{Error, Result};
use crate::source_model::Population;

/// How the efficiency scales the deficit slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    /// Both charging and discharging slopes are multiplied by the efficiency.
    #[default]
    Symmetric,
    /// Only charging is lossy.
    ChargeOnly,
}

fn default_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub population: Population,
    pub grid_power: f64,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    #[serde(default)]
    pub eta_mode: EtaMode,
    pub horizon: f64,
    /// Discarded initial time; 10% of the horizon when absent.
    #[serde(default)]
    pub warmup: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub charge_rate_cap: Option<f64>,
    #[serde(default)]
    pub discharge_rate_cap: Option<f64>,
    /// Grid power law resampled once per replication; overrides `grid_power`.
    #[serde(default)]
    pub capacity_law: Option<CapacityDistribution>,
}

impl SimConfig {
    pub fn new(population: Population, grid_power: f64, horizon: f64, replications: usize, seed: u64) -> Self {
        SimConfig {
            population,
            grid_power,
            efficiency: 1.0,
            eta_mode: EtaMode::Symmetric,
            horizon,
            warmup: None,
            replications,
            seed,
            charge_rate_cap: None,
            discharge_rate_cap: None,
            capacity_law: None,
        }
    }

    pub fn warmup_time(&self) -> f64 {
        self.warmup.unwrap_or(0.1 * self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let warmup = self.warmup_time();
        if !(self.horizon.is_finite() && self.horizon > warmup && warmup >= 0.0) {
            return Err(Error::ParameterDomain(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {warmup}",
                self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(Error::ParameterDomain("replications must be at least 1".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::ParameterDomain(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !self.grid_power.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "grid power must be finite, got {}",
                self.grid_power
            )));
        }
        for cap in [self.charge_rate_cap, self.discharge_rate_cap].into_iter().flatten() {
            if !(cap > 0.0) {
                return Err(Error::ParameterDomain(format!("rate caps must be positive, got {cap}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivorEstimate {
    pub level: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub replications: usize,
}

/// Across-replication averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub levels: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Absent for a single replication.
    pub std_errors: Option<Vec<f64>>,
    /// Time fraction per chain state, in the mixed-radix state order.
    pub occupancy: Vec<f64>,
    pub occupancy_std_errors: Option<Vec<f64>>,
    pub mean_deficit: f64,
    pub mean_square_deficit: f64,
    pub events: u64,
    pub replications: usize,
}

struct Replication {
    above: Vec<f64>,
    occupancy: Vec<f64>,
    deficit: f64,
    deficit_sq: f64,
    events: u64,
}

struct Layout {
    strides: Vec<usize>,
    states: usize,
}

impl Layout {
    fn new(pop: &Population) -> Result<Self> {
        let states = pop.state_count()?;
        let mut strides = Vec::with_capacity(pop.n_classes());
        let mut acc = 1;
        for &n in pop.counts() {
            strides.push(acc);
            acc *= n + 1;
        }
        Ok(Layout { strides, states })
    }

    fn index(&self, occupancy: &[usize]) -> usize {
        occupancy.iter().zip(&self.strides).map(|(n, s)| n * s).sum()
    }
}

/// Adds the contribution of a linear piece starting at `start`, moving at
/// `slope` for `len` time units and reflected at zero.
fn accumulate(start: f64, slope: f64, len: f64, levels: &[f64], above: &mut [f64], first: &mut f64, second: &mut f64) {
    let active = if slope < 0.0 { len.min(start / -slope) } else { len };
    let end = start + slope * active;
    *first += active * 0.5 * (start + end);
    *second += active * (start * start + start * end + end * end) / 3.0;
    for (level, acc) in levels.iter().zip(above.iter_mut()) {
        let t = if slope > 0.0 {
            active - ((level - start) / slope).clamp(0.0, active)
        } else if slope < 0.0 {
            ((start - level) / -slope).clamp(0.0, active)
        } else if start > *level {
            active
        } else {
            0.0
        };
        *acc += t;
    }
}

fn run_replication(cfg: &SimConfig, layout: &Layout, levels: &[f64], rep: usize) -> Result<Replication> {
    let pop = &cfg.population;
    let classes = pop.classes();
    let counts = pop.counts();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep as u64);

    let grid_power = match &cfg.capacity_law {
        Some(law) => law.quantile(rng.random::<f64>()),
        None => cfg.grid_power,
    };

    let mut occ: Vec<usize> = Vec::with_capacity(classes.len());
    for (class, &n) in classes.iter().zip(counts) {
        let draw = Binomial::new(n as u64, class.on_probability())
            .map_err(|e| Error::ParameterDomain(e.to_string()))?;
        occ.push(draw.sample(&mut rng) as usize);
    }

    let warmup = cfg.warmup_time();
    let eta = cfg.efficiency;
    let slope_for = |load: f64| -> f64 {
        let net = load - grid_power;
        let mut slope = match cfg.eta_mode {
            EtaMode::Symmetric => eta * net,
            EtaMode::ChargeOnly if net > 0.0 => net,
            EtaMode::ChargeOnly => eta * net,
        };
        if let Some(cap) = cfg.discharge_rate_cap {
            slope = slope.min(cap);
        }
        if let Some(cap) = cfg.charge_rate_cap {
            slope = slope.max(-cap);
        }
        slope
    };

    let mut out = Replication {
        above: vec![0.0; levels.len()],
        occupancy: vec![0.0; layout.states],
        deficit: 0.0,
        deficit_sq: 0.0,
        events: 0,
    };
    let mut t = 0.0;
    let mut deficit = 0.0f64;
    let mut rates = vec![0.0; 2 * classes.len()];
    loop {
        let mut total = 0.0;
        let mut load = 0.0;
        for (k, class) in classes.iter().enumerate() {
            rates[2 * k] = (counts[k] - occ[k]) as f64 * class.lambda;
            rates[2 * k + 1] = occ[k] as f64 * class.mu;
            total += rates[2 * k] + rates[2 * k + 1];
            load += occ[k] as f64 * class.peak_demand;
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "state {occ:?} has zero total transition rate"
            )));
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / total;
        let next = (t + hold).min(cfg.horizon);
        let slope = slope_for(load);

        // Unobserved warmup part of the piece, then the observed remainder.
        let from = t.max(warmup).min(next);
        if from > t {
            deficit = (deficit + slope * (from - t)).max(0.0);
        }
        if next > from {
            let len = next - from;
            out.occupancy[layout.index(&occ)] += len;
            accumulate(deficit, slope, len, levels, &mut out.above, &mut out.deficit, &mut out.deficit_sq);
            deficit = (deficit + slope * len).max(0.0);
        }
        if next >= cfg.horizon {
            break;
        }
        t = next;

        let mut pick = rng.random::<f64>() * total;
        let mut chosen = rates.len() - 1;
        for (i, r) in rates.iter().enumerate() {
            if pick < *r {
                chosen = i;
                break;
            }
            pick -= r;
        }
        // Guard against rounding landing on a zero-rate slot.
        while rates[chosen] == 0.0 {
            chosen = (chosen + rates.len() - 1) % rates.len();
        }
        let class = chosen / 2;
        if chosen % 2 == 0 {
            occ[class] += 1;
        } else {
            occ[class] -= 1;
        }
        out.events += 1;
    }

    let window = cfg.horizon - warmup;
    for v in out.above.iter_mut().chain(out.occupancy.iter_mut()) {
        *v /= window;
    }
    out.deficit /= window;
    out.deficit_sq /= window;
    Ok(out)
}

fn mean_and_error(samples: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = samples.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs all replications and averages the per-replication statistics.
pub fn simulate(cfg: &SimConfig, levels: &[f64]) -> Result<SimulationSummary> {
    cfg.validate()?;
    if let Some(bad) = levels.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::ParameterDomain(format!("levels must be non-negative, got {bad}")));
    }
    let mean = cfg.population.mean_demand();
    let effective_power = cfg.capacity_law.as_ref().map(|l| l.mean()).unwrap_or(cfg.grid_power);
    if !(effective_power > mean) {
        log::warn!("grid power {effective_power} does not exceed mean demand {mean}; no steady state");
    }
    let layout = Layout::new(&cfg.population)?;
    let reps: Vec<Replication> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, &layout, levels, r))
        .collect::<Result<_>>()?;
    let n = reps.len();

    let mut estimates = Vec::with_capacity(levels.len());
    let mut errors = Vec::with_capacity(levels.len());
    for i in 0..levels.len() {
        let (m, se) = mean_and_error(reps.iter().map(|r| r.above[i]), n);
        estimates.push(m);
        errors.push(se);
    }
    let mut occupancy = Vec::with_capacity(layout.states);
    let mut occ_errors = Vec::with_capacity(layout.states);
    for s in 0..layout.states {
        let (m, se) = mean_and_error(reps.iter().map(|r| r.occupancy[s]), n);
        occupancy.push(m);
        occ_errors.push(se);
    }
    let multi = n >= 2;
    Ok(SimulationSummary {
        levels: levels.to_vec(),
        estimates,
        std_errors: multi.then_some(errors),
        occupancy,
        occupancy_std_errors: multi.then_some(occ_errors),
        mean_deficit: reps.iter().map(|r| r.deficit).sum::<f64>() / n as f64,
        mean_square_deficit: reps.iter().map(|r| r.deficit_sq).sum::<f64>() / n as f64,
        events: reps.iter().map(|r| r.events).sum(),
        replications: n,
    })
}

/// Survivor estimates with standard errors; needs two or more replications.
pub fn estimate_survivor(cfg: &SimConfig, levels: &[f64]) -> Result<Vec<SurvivorEstimate>> {
    if cfg.replications < 2 {
        return Err(Error::Estimator(format!(
            "standard errors need at least 2 replications, got {}",
            cfg.replications
        )));
    }
    let summary = simulate(cfg, levels)?;
    let errors = summary.std_errors.unwrap_or_default();
    Ok(summary
        .levels
        .iter()
        .zip(&summary.estimates)
        .zip(&errors)
        .map(|((&level, &estimate), &std_error)| SurvivorEstimate {
            level,
            estimate,
            std_error,
            replications: summary.replications,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source_model::ConsumerClass;

    #[test]
    fn accumulate_reflects_at_zero() {
        let mut above = vec![0.0; 2];
        let (mut m1, mut m2) = (0.0, 0.0);
        accumulate(2.0, -1.0, 5.0, &[0.0, 1.0], &mut above, &mut m1, &mut m2);
        assert_eq!(above, vec![2.0, 1.0]);
        assert!((m1 - 2.0).abs() < 1e-15);
        assert!((m2 - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accumulate_rising() {
        let mut above = vec![0.0; 3];
        let (mut m1, mut m2) = (0.0, 0.0);
        accumulate(1.0, 2.0, 1.0, &[0.0, 2.0, 5.0], &mut above, &mut m1, &mut m2);
        assert_eq!(above, vec![1.0, 0.5, 0.0]);
        assert!((m1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let pop = Population::single(ConsumerClass::normalized(0.5).unwrap(), 1).unwrap();
        let mut cfg = SimConfig::new(pop, 0.5, 100.0, 2, 1);
        assert!(cfg.validate().is_ok());
        cfg.warmup = Some(200.0);
        assert!(cfg.validate().is_err());
        cfg.warmup = None;
        cfg.efficiency = 0.0;
        assert!(cfg.validate().is_err());
        cfg.efficiency = 1.0;
        cfg.replications = 1;
        assert!(matches!(estimate_survivor(&cfg, &[1.0]), Err(Error::Estimator(_))));
    }

    #[test]
    fn single_replication_has_no_errors() {
        let pop = Population::single(ConsumerClass::normalized(0.5).unwrap(), 1).unwrap();
        let cfg = SimConfig::new(pop, 0.5, 50.0, 1, 7);
        let s = simulate(&cfg, &[0.0]).unwrap();
        assert!(s.std_errors.is_none());
        assert!((s.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
