//! Effective-demand admission and storage sizing.
//!
//! For a decay parameter `zeta = ln(eps) / B < 0` each class contributes an
//! effective demand between its mean and its peak. A population is admitted
//! when the summed effective demand fits under the grid power.

use serde::{Deserialize, Serialize};

use crate::bisect::bisect;
use crate::error::{Error, Result};
use crate::source_model::{ConsumerClass, Population};

const STORAGE_LO: f64 = 1e-6;
const STORAGE_CAP: f64 = (1u64 << 40) as f64;
const STORAGE_TOL: f64 = 1e-6;

/// Decay rate implied by an outage target and a storage size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParameter {
    pub zeta: f64,
    pub epsilon: f64,
    pub storage: f64,
    pub xi: f64,
}

impl DecayParameter {
    pub fn new(epsilon: f64, storage: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(storage > 0.0) || !storage.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "storage must be positive and finite, got {storage}"
            )));
        }
        let zeta = epsilon.ln() / storage;
        Ok(DecayParameter {
            zeta,
            epsilon,
            storage,
            xi: -zeta.exp_m1(),
        })
    }

    /// Decay rate of the stricter check, `ln(1 - xi)`.
    pub fn strict_zeta(&self) -> f64 {
        (1.0 - self.xi).ln()
    }
}

/// Effective demand of one class at `decay.zeta`.
pub fn effective_demand(class: &ConsumerClass, decay: &DecayParameter) -> f64 {
    effective_demand_at(class, decay.zeta)
}

/// Effective demand at an arbitrary `zeta <= 0`, including the limits
/// `zeta = 0` (mean) and `zeta = -inf` (peak).
pub fn effective_demand_at(class: &ConsumerClass, zeta: f64) -> f64 {
    let (lambda, mu, peak) = (class.lambda, class.mu, class.peak_demand);
    if zeta == 0.0 {
        return class.mean_demand();
    }
    if zeta == f64::NEG_INFINITY {
        return peak;
    }
    let b = lambda + mu + zeta * peak;
    let disc = ((zeta * peak + mu - lambda).powi(2) + 4.0 * lambda * mu).sqrt();
    if b >= 0.0 {
        // Rationalized form; no cancellation near zeta = 0.
        2.0 * lambda * peak / (b + disc)
    } else {
        ((b - disc) / (2.0 * zeta)).min(peak)
    }
}

/// Summed effective demand of `counts` consumers per class.
pub fn effective_load(classes: &[ConsumerClass], counts: &[usize], zeta: f64) -> f64 {
    classes
        .iter()
        .zip(counts)
        .map(|(class, &n)| n as f64 * effective_demand_at(class, zeta))
        .sum()
}

/// Outcome of the admission test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub admit: bool,
    /// Result of the stricter check driven by `xi`.
    pub strict_admit: bool,
    pub effective_load: f64,
    /// `grid_power - effective_load`; non-negative when admitted.
    pub margin: f64,
    pub strict_margin: f64,
    pub zeta: f64,
}

pub fn admissible(pop: &Population, grid_power: f64, storage: f64, eps: f64) -> Result<AdmissionDecision> {
    admissible_counts(pop.classes(), pop.counts(), grid_power, storage, eps)
}

/// Admission test on raw class counts; all-zero counts are admitted.
pub fn admissible_counts(
    classes: &[ConsumerClass],
    counts: &[usize],
    grid_power: f64,
    storage: f64,
    eps: f64,
) -> Result<AdmissionDecision> {
    if classes.len() != counts.len() {
        return Err(Error::UnsupportedDimension {
            expected: classes.len(),
            got: counts.len(),
        });
    }
    let decay = DecayParameter::new(eps, storage)?;
    let load = effective_load(classes, counts, decay.zeta);
    let strict_load = effective_load(classes, counts, decay.strict_zeta());
    Ok(AdmissionDecision {
        admit: load <= grid_power,
        strict_admit: strict_load < grid_power,
        effective_load: load,
        margin: grid_power - load,
        strict_margin: grid_power - strict_load,
        zeta: decay.zeta,
    })
}

/// Staircase boundary of the two-class admission region: for each `N_1`,
/// the largest admissible `N_2`.
pub fn admission_region(
    classes: &[ConsumerClass],
    grid_power: f64,
    storage: f64,
    eps: f64,
) -> Result<Vec<(usize, usize)>> {
    if classes.len() != 2 {
        return Err(Error::UnsupportedDimension {
            expected: 2,
            got: classes.len(),
        });
    }
    if !(grid_power >= 0.0) {
        return Err(Error::ParameterDomain(format!(
            "grid power must be non-negative, got {grid_power}"
        )));
    }
    let decay = DecayParameter::new(eps, storage)?;
    let w1 = effective_demand(&classes[0], &decay);
    let w2 = effective_demand(&classes[1], &decay);
    let max_first = (grid_power / w1).floor() as usize;
    Ok((0..=max_first)
        .map(|n1| {
            let room = (grid_power - w1 * n1 as f64).max(0.0);
            (n1, (room / w2).floor() as usize)
        })
        .collect())
}

/// Decay rate `zeta* < 0` at which the summed effective demand equals the
/// grid power. Requires mean demand < grid power < peak demand.
pub fn dominant_decay_rate(pop: &Population, grid_power: f64) -> Result<f64> {
    let mean = pop.mean_demand();
    let peak = pop.peak_demand();
    if !(grid_power > mean) {
        return Err(Error::Stability {
            mean_demand: mean,
            grid_power,
        });
    }
    if grid_power >= peak {
        return Err(Error::ParameterDomain(format!(
            "grid power {grid_power} covers the peak {peak}; no decaying mode"
        )));
    }
    let load = |zeta: f64| effective_load(pop.classes(), pop.counts(), zeta);
    // Load decreases from peak (zeta -> -inf) to mean (zeta -> 0).
    let mut lo = -1.0;
    while load(lo) <= grid_power {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Numerical {
                stage: "decay-rate bracket",
                residual: load(lo) - grid_power,
            });
        }
    }
    let mut hi = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if load(mid) > grid_power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest storage admitting `pop` under the effective-demand rule.
pub fn min_storage(pop: &Population, grid_power: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::ParameterDomain(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let mean = pop.mean_demand();
    if grid_power >= pop.peak_demand() {
        return Ok(0.0);
    }
    if !(grid_power > mean) {
        return Err(Error::Infeasible(format!(
            "grid power {grid_power} does not exceed mean demand {mean}; no finite storage suffices"
        )));
    }
    let admits = |storage: f64| -> Result<bool> {
        let zeta = eps.ln() / storage;
        Ok(effective_load(pop.classes(), pop.counts(), zeta) <= grid_power)
    };
    if admits(STORAGE_LO)? {
        return Ok(STORAGE_LO);
    }
    let mut hi = 1.0;
    while !admits(hi)? {
        hi *= 2.0;
        if hi > STORAGE_CAP {
            return Err(Error::Infeasible(format!(
                "no storage below {STORAGE_CAP} admits the population"
            )));
        }
    }
    let lo = if hi > 1.0 { hi / 2.0 } else { STORAGE_LO };
    let bracket = bisect(lo, hi, STORAGE_TOL, 200, admits)?;
    Ok(bracket.hi)
}
