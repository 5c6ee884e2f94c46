//! Per-user monthly cost of serving peak-hour demand three ways: from the
//! grid alone, from a private storage unit, or from a grid connection plus a
//! storage unit shared by the whole population.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Error, Result};
use crate::sizing::{epsilon_outage_capacity, Engine};
use crate::source_model::{ConsumerClass, Population};

pub const DEFAULT_BREAKEVEN_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    #[default]
    Residential,
    SmallCi,
    LargeCi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLevel {
    #[default]
    Average,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCase {
    GridOnly,
    EssOnly,
    Shared,
}

/// Which per-user power the $/kW penalties are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenefitBasis {
    /// Expected peak-hour draw, `A * R * lambda / (lambda + mu)`.
    #[default]
    MeanDemand,
    /// Connected load, `A * R`.
    PeakDemand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BySegment<T> {
    pub residential: T,
    pub small_ci: T,
    pub large_ci: T,
}

impl<T> BySegment<T> {
    pub fn get(&self, segment: Segment) -> &T {
        match segment {
            Segment::Residential => &self.residential,
            Segment::SmallCi => &self.small_ci,
            Segment::LargeCi => &self.large_ci,
        }
    }

    fn rows(&self) -> [(&'static str, &T); 3] {
        [
            ("residential", &self.residential),
            ("small_ci", &self.small_ci),
            ("large_ci", &self.large_ci),
        ]
    }
}

/// $/kW per event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityCosts {
    pub average: f64,
    pub high: f64,
}

/// $/kW per interruption of the given length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageCosts {
    pub min15: f64,
    pub min30: f64,
    pub hour1: f64,
    pub hour2: f64,
}

impl OutageCosts {
    /// (duration in minutes, cost) per bucket, longest first.
    pub fn buckets(&self) -> [(f64, f64); 4] {
        [
            (120.0, self.hour2),
            (60.0, self.hour1),
            (30.0, self.min30),
            (15.0, self.min15),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRates {
    pub peak: f64,
    pub off_peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalRates {
    pub summer: PeriodRates,
    pub winter: PeriodRates,
}

impl SeasonalRates {
    /// Rates blended with weight `summer_share` on summer.
    pub fn blended(&self, summer_share: f64) -> PeriodRates {
        let w = summer_share;
        PeriodRates {
            peak: w * self.summer.peak + (1.0 - w) * self.winter.peak,
            off_peak: w * self.summer.off_peak + (1.0 - w) * self.winter.off_peak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TariffBook {
    pub power_quality: BySegment<QualityCosts>,
    pub outage: BySegment<OutageCosts>,
    /// $/kWh.
    pub tou_rates: BySegment<SeasonalRates>,
    /// $/kW-month; informational, never billed.
    pub demand_charges: BySegment<SeasonalRates>,
}

const fn rates(sp: f64, so: f64, wp: f64, wo: f64) -> SeasonalRates {
    SeasonalRates {
        summer: PeriodRates {
            peak: sp,
            off_peak: so,
        },
        winter: PeriodRates {
            peak: wp,
            off_peak: wo,
        },
    }
}

impl Default for TariffBook {
    fn default() -> Self {
        TariffBook {
            power_quality: BySegment {
                residential: QualityCosts {
                    average: 0.10,
                    high: 0.60,
                },
                small_ci: QualityCosts {
                    average: 0.42,
                    high: 2.52,
                },
                large_ci: QualityCosts {
                    average: 1.42,
                    high: 14.00,
                },
            },
            outage: BySegment {
                residential: OutageCosts {
                    min15: 0.05,
                    min30: 0.60,
                    hour1: 2.60,
                    hour2: 3.95,
                },
                small_ci: OutageCosts {
                    min15: 8.65,
                    min30: 16.01,
                    hour1: 23.37,
                    hour2: 48.91,
                },
                large_ci: OutageCosts {
                    min15: 4.79,
                    min30: 7.46,
                    hour1: 10.12,
                    hour2: 17.96,
                },
            },
            tou_rates: BySegment {
                residential: rates(0.25, 0.06, 0.13, 0.06),
                small_ci: rates(0.18, 0.05, 0.12, 0.05),
                large_ci: rates(0.06, 0.04, 0.05, 0.04),
            },
            demand_charges: BySegment {
                residential: rates(0.0, 0.0, 0.0, 0.0),
                small_ci: rates(15.0, 15.0, 8.0, 8.0),
                large_ci: rates(12.0, 12.0, 10.0, 10.0),
            },
        }
    }
}

fn check_entry(table: &str, row: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "{table}.{row} holds invalid entry {value}"
        )))
    }
}

fn check_rates(table: &str, row: &str, r: &SeasonalRates) -> Result<()> {
    for (season, p) in [("summer", r.summer), ("winter", r.winter)] {
        check_entry(table, row, p.peak)?;
        check_entry(table, row, p.off_peak)?;
        if p.peak < p.off_peak {
            return Err(Error::ParameterDomain(format!(
                "{table}.{row}.{season}: peak rate {} is below off-peak rate {}",
                p.peak, p.off_peak
            )));
        }
    }
    Ok(())
}

impl TariffBook {
    pub fn from_json(text: &str) -> Result<Self> {
        let book: TariffBook = serde_json::from_str(text)?;
        book.validate()?;
        Ok(book)
    }

    pub fn validate(&self) -> Result<()> {
        for (row, q) in self.power_quality.rows() {
            check_entry("power_quality", row, q.average)?;
            check_entry("power_quality", row, q.high)?;
        }
        for (row, o) in self.outage.rows() {
            for (_, cost) in o.buckets() {
                check_entry("outage", row, cost)?;
            }
        }
        for (row, r) in self.tou_rates.rows() {
            check_rates("tou_rates", row, r)?;
        }
        for (row, r) in self.demand_charges.rows() {
            check_rates("demand_charges", row, r)?;
        }
        Ok(())
    }
}

/// Splits a yearly interruption budget into standard event lengths by
/// repeatedly taking the bucket nearest to what remains.
pub fn interruption_events(minutes: f64, buckets: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let shortest = buckets.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let mut remaining = minutes;
    let mut events = Vec::new();
    while remaining >= 0.5 * shortest && events.len() < 10_000 {
        let mut best = buckets[0];
        for &b in buckets {
            // Longer bucket wins ties.
            let better = (b.0 - remaining).abs() < (best.0 - remaining).abs();
            if better {
                best = b;
            }
        }
        events.push(best);
        remaining -= best.0;
    }
    events
}

/// Capital recovery: equal yearly payment repaying `capex` over `years` at
/// `rate`. A zero rate gives straight-line repayment.
pub fn annualized_storage_cost(capex: f64, years: f64, rate: f64) -> Result<f64> {
    if !(years >= 1.0) {
        return Err(Error::ParameterDomain(format!("years must be at least 1, got {years}")));
    }
    if !(rate >= 0.0 && rate < 1.0) {
        return Err(Error::ParameterDomain(format!("rate must lie in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(capex / years);
    }
    let growth_m1 = (years * rate.ln_1p()).exp_m1();
    Ok(capex * rate * (1.0 + growth_m1) / growth_m1)
}

fn default_appliances() -> usize {
    15
}
fn default_peak_per_appliance() -> f64 {
    1.2
}
fn default_peak_days() -> f64 {
    250.0
}
fn default_peak_hours() -> f64 {
    1.0
}
fn default_interruption() -> f64 {
    88.0
}
fn default_storage_cost() -> f64 {
    1500.0
}
fn default_years() -> f64 {
    15.0
}
fn default_discount() -> f64 {
    0.10
}
fn default_lambda() -> f64 {
    0.25
}
fn default_one() -> f64 {
    1.0
}
fn default_users() -> usize {
    1
}
fn default_headroom() -> f64 {
    1.2
}
fn default_epsilon() -> f64 {
    0.001
}

/// Inputs of one cost evaluation. Rates are per hour and power is in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconScenario {
    pub case: CostCase,
    #[serde(default)]
    pub segment: Segment,
    #[serde(default)]
    pub quality_level: QualityLevel,
    #[serde(default = "default_appliances")]
    pub appliances_per_user: usize,
    #[serde(default = "default_peak_per_appliance")]
    pub peak_demand_per_appliance: f64,
    #[serde(default = "default_peak_days")]
    pub peak_days_per_year: f64,
    #[serde(default = "default_peak_hours")]
    pub peak_hours: f64,
    #[serde(default = "default_interruption")]
    pub interruption_minutes_per_year: f64,
    #[serde(default = "default_one")]
    pub power_quality_events_per_year: f64,
    #[serde(default = "default_storage_cost")]
    pub storage_annual_cost: f64,
    /// When present, replaces `storage_annual_cost` by its capital recovery.
    #[serde(default)]
    pub storage_capex: Option<f64>,
    #[serde(default = "default_years")]
    pub project_years: f64,
    #[serde(default = "default_discount")]
    pub discount_rate: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_one")]
    pub mu: f64,
    #[serde(default = "default_users")]
    pub n_users: usize,
    /// Grid power as a multiple of the population's mean demand.
    #[serde(default = "default_headroom")]
    pub grid_headroom: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_one")]
    pub efficiency: f64,
    /// Weight of summer rates in the blended tariff.
    #[serde(default = "default_one")]
    pub summer_share: f64,
    #[serde(default)]
    pub benefit_basis: BenefitBasis,
}

impl EconScenario {
    pub fn new(case: CostCase, lambda: f64, n_users: usize) -> Self {
        EconScenario {
            case,
            segment: Segment::Residential,
            quality_level: QualityLevel::Average,
            appliances_per_user: default_appliances(),
            peak_demand_per_appliance: default_peak_per_appliance(),
            peak_days_per_year: default_peak_days(),
            peak_hours: default_peak_hours(),
            interruption_minutes_per_year: default_interruption(),
            power_quality_events_per_year: 1.0,
            storage_annual_cost: default_storage_cost(),
            storage_capex: None,
            project_years: default_years(),
            discount_rate: default_discount(),
            lambda,
            mu: 1.0,
            n_users,
            grid_headroom: default_headroom(),
            epsilon: default_epsilon(),
            efficiency: 1.0,
            summer_share: 1.0,
            benefit_basis: BenefitBasis::MeanDemand,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_demand_per_appliance", self.peak_demand_per_appliance),
            ("peak_days_per_year", self.peak_days_per_year),
            ("peak_hours", self.peak_hours),
            ("project_years", self.project_years),
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("grid_headroom", self.grid_headroom),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::ParameterDomain(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("interruption_minutes_per_year", self.interruption_minutes_per_year),
            ("power_quality_events_per_year", self.power_quality_events_per_year),
            ("storage_annual_cost", self.storage_annual_cost),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ParameterDomain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.appliances_per_user == 0 || self.n_users == 0 {
            return Err(Error::ParameterDomain(
                "appliances_per_user and n_users must be at least 1".into(),
            ));
        }
        if !(self.discount_rate > 0.0 && self.discount_rate < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "discount_rate must lie in (0, 1), got {}",
                self.discount_rate
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::ParameterDomain(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !(0.0..=1.0).contains(&self.summer_share) {
            return Err(Error::ParameterDomain(format!(
                "summer_share must lie in [0, 1], got {}",
                self.summer_share
            )));
        }
        Ok(())
    }

    pub fn appliance(&self) -> Result<ConsumerClass> {
        ConsumerClass::new(self.lambda, self.mu, self.peak_demand_per_appliance)
    }

    /// Appliance population of `n_users` users.
    pub fn population(&self, n_users: usize) -> Result<Population> {
        Population::single(self.appliance()?, n_users * self.appliances_per_user)
    }

    pub fn annual_storage_cost(&self) -> Result<f64> {
        match self.storage_capex {
            Some(capex) => annualized_storage_cost(capex, self.project_years, self.discount_rate),
            None => Ok(self.storage_annual_cost),
        }
    }

    /// Mean peak-hour power of one user (kW).
    pub fn mean_user_demand(&self) -> Result<f64> {
        Ok(self.appliances_per_user as f64 * self.appliance()?.mean_demand())
    }

    /// Peak-hour energy of one user per month (kWh).
    pub fn monthly_energy(&self) -> Result<f64> {
        Ok(self.mean_user_demand()? * self.peak_hours * self.peak_days_per_year / 12.0)
    }

    fn benefit_kw(&self) -> Result<f64> {
        Ok(match self.benefit_basis {
            BenefitBasis::MeanDemand => self.mean_user_demand()?,
            BenefitBasis::PeakDemand => self.appliances_per_user as f64 * self.peak_demand_per_appliance,
        })
    }
}

/// Computes the storage size for a population and grid power.
pub trait Sizer {
    fn storage(&self, pop: &Population, grid_power: f64, eps: f64) -> Result<f64>;
}

impl Sizer for Engine {
    fn storage(&self, pop: &Population, grid_power: f64, eps: f64) -> Result<f64> {
        Ok(epsilon_outage_capacity(pop, grid_power, eps, *self)?.storage)
    }
}

impl<F> Sizer for F
where
    F: Fn(&Population, f64, f64) -> Result<f64>,
{
    fn storage(&self, pop: &Population, grid_power: f64, eps: f64) -> Result<f64> {
        self(pop, grid_power, eps)
    }
}

/// Itemized per-user monthly cost ($).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub case: CostCase,
    pub n_users: usize,
    /// Peak-hour energy bought from the grid at the peak rate.
    pub grid_energy: f64,
    /// Energy delivered from storage, bought off-peak and grossed up by losses.
    pub storage_energy: f64,
    pub storage: f64,
    pub power_quality: f64,
    pub reliability: f64,
    pub total: f64,
    /// Shared case only: grid power (kW) and storage (kWh).
    pub grid_power: Option<f64>,
    pub storage_size: Option<f64>,
    pub reference_storage_size: Option<f64>,
}

impl CostBreakdown {
    /// Sum of the items, in the order used for `total`.
    pub fn item_sum(&self) -> f64 {
        self.grid_energy + self.storage_energy + self.storage + self.power_quality + self.reliability
    }
}

/// `E[(L - C)^+] / E[L]` for a binomial load of `n` appliances.
pub fn unmet_energy_fraction(n: usize, class: &ConsumerClass, grid_power: f64) -> Result<f64> {
    let p = class.on_probability();
    let dist = Binomial::new(p, n as u64).map_err(|e| Error::ParameterDomain(e.to_string()))?;
    let mean = n as f64 * class.mean_demand();
    let first = (grid_power / class.peak_demand).floor() as i64 + 1;
    let mode = ((n as f64 + 1.0) * p).floor() as i64;
    let mut excess = 0.0;
    for k in first.max(0) as u64..=n as u64 {
        let term = dist.pmf(k) * (k as f64 * class.peak_demand - grid_power);
        excess += term;
        if (k as i64) > mode && term < excess * 1e-17 {
            break;
        }
    }
    Ok(excess / mean)
}

fn with_context(err: Error, context: &str) -> Error {
    match err {
        Error::Infeasible(m) => Error::Infeasible(format!("{context}: {m}")),
        Error::Estimator(m) => Error::Estimator(format!("{context}: {m}")),
        Error::ParameterDomain(m) => Error::ParameterDomain(format!("{context}: {m}")),
        other => {
            log::error!("{context}: {other}");
            other
        }
    }
}

/// Precomputed pieces shared by every population size.
struct CostModel<'a> {
    s: &'a EconScenario,
    energy: f64,
    tariff: PeriodRates,
    annual_storage: f64,
    quality: f64,
    reliability: f64,
}

impl<'a> CostModel<'a> {
    fn new(s: &'a EconScenario, t: &TariffBook) -> Result<Self> {
        s.validate()?;
        t.validate()?;
        let tariff = t.tou_rates.get(s.segment).blended(s.summer_share);
        let kw = s.benefit_kw()?;
        let q = t.power_quality.get(s.segment);
        let per_event = match s.quality_level {
            QualityLevel::Average => q.average,
            QualityLevel::High => q.high,
        };
        let quality = per_event * s.power_quality_events_per_year * kw / 12.0;
        let events = interruption_events(
            s.interruption_minutes_per_year,
            &t.outage.get(s.segment).buckets(),
        );
        let reliability = events.iter().map(|(_, cost)| cost).sum::<f64>() * kw / 12.0;
        Ok(CostModel {
            s,
            energy: s.monthly_energy()?,
            tariff,
            annual_storage: s.annual_storage_cost()?,
            quality,
            reliability,
        })
    }

    fn finish(mut b: CostBreakdown) -> CostBreakdown {
        b.total = b.item_sum();
        b
    }

    fn grid_only(&self) -> CostBreakdown {
        Self::finish(CostBreakdown {
            case: CostCase::GridOnly,
            n_users: self.s.n_users,
            grid_energy: self.energy * self.tariff.peak,
            storage_energy: 0.0,
            storage: 0.0,
            power_quality: self.quality,
            reliability: self.reliability,
            total: 0.0,
            grid_power: None,
            storage_size: None,
            reference_storage_size: None,
        })
    }

    fn ess_only(&self) -> CostBreakdown {
        Self::finish(CostBreakdown {
            case: CostCase::EssOnly,
            n_users: self.s.n_users,
            grid_energy: 0.0,
            storage_energy: self.energy * self.tariff.off_peak / self.s.efficiency,
            storage: self.annual_storage / 12.0,
            power_quality: 0.0,
            reliability: 0.0,
            total: 0.0,
            grid_power: None,
            storage_size: None,
            reference_storage_size: None,
        })
    }

    fn grid_power(&self, pop: &Population) -> f64 {
        self.s.grid_headroom * pop.mean_demand()
    }

    fn reference_storage(&self, sizer: &dyn Sizer) -> Result<f64> {
        let pop = self.s.population(1)?;
        sizer
            .storage(&pop, self.grid_power(&pop), self.s.epsilon)
            .map_err(|e| with_context(e, "sizing the single-user reference storage"))
    }

    /// Storage-free part of the shared cost.
    fn shared_energy(&self, n_users: usize) -> Result<(f64, f64, f64)> {
        let pop = self.s.population(n_users)?;
        let class = self.s.appliance()?;
        let c = self.grid_power(&pop);
        let unmet = unmet_energy_fraction(pop.total_users(), &class, c)?;
        Ok((
            (1.0 - unmet) * self.energy * self.tariff.peak,
            unmet * self.energy * self.tariff.off_peak / self.s.efficiency,
            c,
        ))
    }

    fn shared(&self, n_users: usize, sizer: &dyn Sizer, reference: f64) -> Result<CostBreakdown> {
        let (grid_energy, storage_energy, c) = self.shared_energy(n_users)?;
        let size = if n_users == 1 {
            reference
        } else {
            let pop = self.s.population(n_users)?;
            sizer
                .storage(&pop, c, self.s.epsilon)
                .map_err(|e| with_context(e, &format!("sizing shared storage for {n_users} users")))?
        };
        let ratio = if n_users == 1 {
            1.0
        } else if reference > 0.0 {
            size / reference
        } else {
            0.0
        };
        Ok(Self::finish(CostBreakdown {
            case: CostCase::Shared,
            n_users,
            grid_energy,
            storage_energy,
            storage: self.annual_storage / 12.0 * ratio / n_users as f64,
            power_quality: 0.0,
            reliability: 0.0,
            total: 0.0,
            grid_power: Some(c),
            storage_size: Some(size),
            reference_storage_size: Some(reference),
        }))
    }
}

/// Per-user monthly cost of `s.case` with an itemized breakdown.
pub fn scenario_cost(s: &EconScenario, t: &TariffBook, sizer: &dyn Sizer) -> Result<CostBreakdown> {
    let model = CostModel::new(s, t)?;
    match s.case {
        CostCase::GridOnly => Ok(model.grid_only()),
        CostCase::EssOnly => Ok(model.ess_only()),
        CostCase::Shared => {
            let reference = model.reference_storage(sizer)?;
            model.shared(s.n_users, sizer, reference)
        }
    }
}

/// All three cases for each population size in `sizes`.
pub fn cost_table(
    s: &EconScenario,
    t: &TariffBook,
    sizer: &dyn Sizer,
    sizes: &[usize],
) -> Result<Vec<[CostBreakdown; 3]>> {
    let model = CostModel::new(s, t)?;
    let reference = model.reference_storage(sizer)?;
    sizes
        .iter()
        .map(|&n| {
            let mut grid = model.grid_only();
            let mut ess = model.ess_only();
            grid.n_users = n;
            ess.n_users = n;
            Ok([grid, ess, model.shared(n, sizer, reference)?])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakeven {
    /// Smallest population whose shared cost beats the grid-only cost.
    pub n_users: Option<usize>,
    pub grid_only_cost: f64,
    /// Shared cost at `n_users`, or at the last size scanned.
    pub shared_cost: f64,
    /// Shared cost one user earlier.
    pub previous_shared_cost: Option<f64>,
    pub scanned: usize,
    /// False when the shared cost failed to decrease somewhere in the scan.
    pub monotone: bool,
}

/// Linear scan over `n_users = 1..=cap` for the first size where sharing
/// is cheaper than buying everything from the grid.
pub fn breakeven_population(s: &EconScenario, t: &TariffBook, sizer: &dyn Sizer, cap: usize) -> Result<Breakeven> {
    let model = CostModel::new(s, t)?;
    let grid = model.grid_only().total;
    let floor_rate = model.tariff.peak.min(model.tariff.off_peak / s.efficiency);
    let mut result = Breakeven {
        n_users: None,
        grid_only_cost: grid,
        shared_cost: f64::NAN,
        previous_shared_cost: None,
        scanned: 0,
        monotone: true,
    };
    if model.energy * floor_rate >= grid {
        log::info!("energy alone costs at least the grid-only total; no breakeven");
        return Ok(result);
    }
    let reference = model.reference_storage(sizer)?;
    let mut previous: Option<f64> = None;
    for n in 1..=cap {
        let shared = model.shared(n, sizer, reference)?.total;
        result.scanned = n;
        if let Some(p) = previous {
            if shared >= p {
                log::warn!("shared cost rose from {p} to {shared} at {n} users");
                result.monotone = false;
            }
        }
        result.previous_shared_cost = previous;
        result.shared_cost = shared;
        if shared < grid {
            result.n_users = Some(n);
            return Ok(result);
        }
        previous = Some(shared);
    }
    Ok(result)
}
