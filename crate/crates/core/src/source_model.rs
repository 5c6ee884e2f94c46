//! On/Off consumer classes and the composite birth-death chain they induce.
//!
//! A population of `K` classes with `N_k` independent two-state consumers is
//! lumped into a CTMC over occupancy tuples `n = (n_1, .., n_K)`, where `n_k`
//! counts the class-`k` consumers currently drawing power. States are indexed
//! mixed-radix with `n_1` varying fastest.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Error, Result};

/// Default upper bound on the number of enumerated states.
pub const DEFAULT_STATE_CAP: usize = 200_000;

/// One appliance type: Off->On rate `lambda`, On->Off rate `mu`, and the
/// power `peak_demand` drawn while On.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClass")]
pub struct ConsumerClass {
    pub lambda: f64,
    pub mu: f64,
    pub peak_demand: f64,
}

#[derive(Deserialize)]
struct RawClass {
    lambda: f64,
    mu: f64,
    peak_demand: f64,
}

impl TryFrom<RawClass> for ConsumerClass {
    type Error = Error;

    fn try_from(raw: RawClass) -> Result<Self> {
        ConsumerClass::new(raw.lambda, raw.mu, raw.peak_demand)
    }
}

impl ConsumerClass {
    pub fn new(lambda: f64, mu: f64, peak_demand: f64) -> Result<Self> {
        let class = ConsumerClass {
            lambda,
            mu,
            peak_demand,
        };
        class.validate()?;
        Ok(class)
    }

    /// Class in normalized units: time in mean On durations (`mu = 1`) and
    /// power in peak demands (`R = 1`).
    pub fn normalized(lambda: f64) -> Result<Self> {
        ConsumerClass::new(lambda, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.lambda) {
            return Err(Error::ParameterDomain(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if !ok(self.mu) {
            return Err(Error::ParameterDomain(format!(
                "mu must be positive and finite, got {}",
                self.mu
            )));
        }
        if !ok(self.peak_demand) {
            return Err(Error::ParameterDomain(format!(
                "peak_demand must be positive and finite, got {}",
                self.peak_demand
            )));
        }
        Ok(())
    }

    /// Activity ratio `lambda / mu`.
    pub fn chi(&self) -> f64 {
        self.lambda / self.mu
    }

    /// Stationary probability that one consumer is On.
    pub fn on_probability(&self) -> f64 {
        self.lambda / (self.lambda + self.mu)
    }

    /// Long-run average power of a single consumer.
    pub fn mean_demand(&self) -> f64 {
        self.peak_demand * self.on_probability()
    }
}

/// Consumer classes together with their head counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPopulation")]
pub struct Population {
    classes: Vec<ConsumerClass>,
    counts: Vec<usize>,
}

#[derive(Deserialize)]
struct RawPopulation {
    classes: Vec<ConsumerClass>,
    counts: Vec<usize>,
}

impl TryFrom<RawPopulation> for Population {
    type Error = Error;

    fn try_from(raw: RawPopulation) -> Result<Self> {
        Population::new(raw.classes, raw.counts)
    }
}

impl Population {
    pub fn new(classes: Vec<ConsumerClass>, counts: Vec<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::ParameterDomain("population has no classes".into()));
        }
        if classes.len() != counts.len() {
            return Err(Error::ParameterDomain(format!(
                "{} classes but {} counts",
                classes.len(),
                counts.len()
            )));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::ParameterDomain(
                "at least one class count must be positive".into(),
            ));
        }
        for class in &classes {
            class.validate()?;
        }
        let pop = Population { classes, counts };
        pop.state_count()?;
        Ok(pop)
    }

    /// `n_users` identical consumers of a single class.
    pub fn single(class: ConsumerClass, n_users: usize) -> Result<Self> {
        Population::new(vec![class], vec![n_users])
    }

    /// Single class in normalized units (`mu = 1`, `R = 1`).
    pub fn normalized(lambda: f64, n_users: usize) -> Result<Self> {
        Population::single(ConsumerClass::normalized(lambda)?, n_users)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn classes(&self) -> &[ConsumerClass] {
        &self.classes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total_users(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `prod_k (N_k + 1)`, or a capacity error on overflow.
    pub fn state_count(&self) -> Result<usize> {
        self.counts.iter().try_fold(1usize, |acc, &n| {
            n.checked_add(1)
                .and_then(|r| acc.checked_mul(r))
                .ok_or(Error::Capacity {
                    states: usize::MAX,
                    cap: usize::MAX,
                })
        })
    }

    /// `sum_k N_k R_k lambda_k / (lambda_k + mu_k)`.
    pub fn mean_demand(&self) -> f64 {
        self.classes
            .iter()
            .zip(&self.counts)
            .map(|(c, &n)| n as f64 * c.mean_demand())
            .sum()
    }

    /// Aggregate demand with every consumer On.
    pub fn peak_demand(&self) -> f64 {
        self.classes
            .iter()
            .zip(&self.counts)
            .map(|(c, &n)| n as f64 * c.peak_demand)
            .sum()
    }

    /// Same classes with every count scaled by `factor`.
    pub fn scaled(&self, factor: usize) -> Result<Self> {
        Population::new(
            self.classes.clone(),
            self.counts.iter().map(|&n| n * factor).collect(),
        )
    }
}

/// Conversion between normalized and physical units.
///
/// Normalized storage is measured in `R_p / mu` (peak power times mean On
/// time) and normalized power in `R_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub peak_kw: f64,
    pub unit_time_hours: f64,
}

impl Units {
    pub fn normalized() -> Self {
        Units {
            peak_kw: 1.0,
            unit_time_hours: 1.0,
        }
    }

    pub fn physical(peak_kw: f64, unit_time_hours: f64) -> Result<Self> {
        if !(peak_kw > 0.0 && unit_time_hours > 0.0) {
            return Err(Error::ParameterDomain(
                "peak_kw and unit_time_hours must be positive".into(),
            ));
        }
        Ok(Units {
            peak_kw,
            unit_time_hours,
        })
    }

    pub fn storage_kwh(&self, normalized: f64) -> f64 {
        normalized * self.peak_kw * self.unit_time_hours
    }

    pub fn power_kw(&self, normalized: f64) -> f64 {
        normalized * self.peak_kw
    }

    /// Per-hour rate corresponding to a per-unit-time rate.
    pub fn rate_per_hour(&self, normalized: f64) -> f64 {
        normalized / self.unit_time_hours
    }
}

/// Enumerated composite chain with sparse generator, per-state aggregate load
/// and stationary law.
#[derive(Debug, Clone)]
pub struct FluidModel {
    population: Population,
    states: Vec<Vec<usize>>,
    strides: Vec<usize>,
    transitions: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
    loads: Vec<f64>,
    stationary: Vec<f64>,
}

impl FluidModel {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    /// Occupancy tuples in index order.
    pub fn states(&self) -> &[Vec<usize>] {
        &self.states
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Off-diagonal outgoing transitions `(target, rate)` of `state`.
    pub fn transitions(&self, state: usize) -> &[(usize, f64)] {
        &self.transitions[state]
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Index of an occupancy tuple, if it lies inside the state space.
    pub fn index_of(&self, occupancy: &[usize]) -> Option<usize> {
        if occupancy.len() != self.strides.len() {
            return None;
        }
        let counts = self.population.counts();
        let mut idx = 0;
        for (k, &n) in occupancy.iter().enumerate() {
            if n > counts[k] {
                return None;
            }
            idx += n * self.strides[k];
        }
        Some(idx)
    }

    /// Generator entry `M[from, to]`.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return self.diagonal[from];
        }
        self.transitions[from]
            .iter()
            .find(|(t, _)| *t == to)
            .map_or(0.0, |&(_, r)| r)
    }

    pub fn dense_generator(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diagonal[i];
            for &(j, r) in &self.transitions[i] {
                m[(i, j)] += r;
            }
        }
        m
    }

    /// Largest absolute generator row sum (zero for a valid generator).
    pub fn max_row_sum_residual(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let off: f64 = self.transitions[i].iter().map(|&(_, r)| r).sum();
                (off + self.diagonal[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Infinity norm of the generator.
    pub fn generator_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                self.diagonal[i].abs()
                    + self.transitions[i].iter().map(|&(_, r)| r.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Stationary mean of the aggregate load.
    pub fn mean_load(&self) -> f64 {
        self.loads
            .iter()
            .zip(&self.stationary)
            .map(|(l, p)| l * p)
            .sum()
    }

    /// Largest `|pi M|` entry.
    pub fn stationary_residual(&self) -> f64 {
        let mut acc = vec![0.0; self.len()];
        for i in 0..self.len() {
            acc[i] += self.stationary[i] * self.diagonal[i];
            for &(j, r) in &self.transitions[i] {
                acc[j] += self.stationary[i] * r;
            }
        }
        acc.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn on_binomial(n_users: usize, class: &ConsumerClass) -> Result<Vec<f64>> {
    class.validate()?;
    let dist = Binomial::new(class.on_probability(), n_users as u64)
        .map_err(|e| Error::ParameterDomain(e.to_string()))?;
    Ok((0..=n_users as u64).map(|k| dist.pmf(k)).collect())
}

/// Binomial law of the number of On consumers among `n_users` of one class.
pub fn stationary_distribution(n_users: usize, class: &ConsumerClass) -> Result<Vec<f64>> {
    if n_users == 0 {
        return Err(Error::ParameterDomain("n_users must be at least 1".into()));
    }
    on_binomial(n_users, class)
}

/// `(N+1)`-state birth-death chain for one class.
pub fn build_generator_single(n_users: usize, class: &ConsumerClass) -> Result<FluidModel> {
    if n_users == 0 {
        return Err(Error::ParameterDomain("n_users must be at least 1".into()));
    }
    build_generator_multi(&Population::single(*class, n_users)?)
}

/// Composite chain for a multi-class population, capped at
/// [`DEFAULT_STATE_CAP`] states.
pub fn build_generator_multi(pop: &Population) -> Result<FluidModel> {
    build_generator_multi_with_cap(pop, DEFAULT_STATE_CAP)
}

pub fn build_generator_multi_with_cap(pop: &Population, cap: usize) -> Result<FluidModel> {
    let size = pop.state_count().map_err(|_| Error::Capacity {
        states: usize::MAX,
        cap,
    })?;
    if size > cap {
        return Err(Error::Capacity { states: size, cap });
    }
    let counts = pop.counts();
    let classes = pop.classes();
    let k = counts.len();

    let mut strides = Vec::with_capacity(k);
    let mut stride = 1;
    for &n in counts {
        strides.push(stride);
        stride *= n + 1;
    }

    let marginals: Vec<Vec<f64>> = classes
        .iter()
        .zip(counts)
        .map(|(c, &n)| on_binomial(n, c))
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(size);
    let mut transitions = Vec::with_capacity(size);
    let mut diagonal = Vec::with_capacity(size);
    let mut loads = Vec::with_capacity(size);
    let mut stationary = Vec::with_capacity(size);

    let mut occ = vec![0usize; k];
    for _ in 0..size {
        let mut out = Vec::with_capacity(2 * k);
        let mut total = 0.0;
        let mut load = 0.0;
        let mut prob = 1.0;
        for c in 0..k {
            let n = occ[c];
            let class = &classes[c];
            load += n as f64 * class.peak_demand;
            prob *= marginals[c][n];
            let index = occ_index(&occ, &strides);
            if n < counts[c] {
                let r = (counts[c] - n) as f64 * class.lambda;
                out.push((index + strides[c], r));
                total += r;
            }
            if n > 0 {
                let r = n as f64 * class.mu;
                out.push((index - strides[c], r));
                total += r;
            }
        }
        states.push(occ.clone());
        transitions.push(out);
        diagonal.push(-total);
        loads.push(load);
        stationary.push(prob);

        // advance the mixed-radix counter, first coordinate fastest
        for c in 0..k {
            if occ[c] < counts[c] {
                occ[c] += 1;
                break;
            }
            occ[c] = 0;
        }
    }

    Ok(FluidModel {
        population: pop.clone(),
        states,
        strides,
        transitions,
        diagonal,
        loads,
        stationary,
    })
}

fn occ_index(occ: &[usize], strides: &[usize]) -> usize {
    occ.iter().zip(strides).map(|(n, s)| n * s).sum()
}

/// `sum_k N_k R_k lambda_k / (lambda_k + mu_k)`.
pub fn mean_demand(pop: &Population) -> f64 {
    pop.mean_demand()
}
