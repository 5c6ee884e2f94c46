//! Epsilon-outage storage sizing and inverse grid-power planning.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bisect::{bisect, Bracket};
use crate::closed_forms;
use crate::effective_demand::{self, dominant_decay_rate};
use crate::error::{Error, Result};
use crate::source_model::{build_generator_multi, FluidModel, Population};
use crate::spectral::{self, SpectralSolution};

pub const BRACKET_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
const STORAGE_CEILING: f64 = 1e12;

/// Method used to evaluate the outage probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Spectral,
    EffectiveDemand,
    ClosedForm,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Spectral => "spectral",
            Engine::EffectiveDemand => "effective_demand",
            Engine::ClosedForm => "closed_form",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Engine::Spectral),
            "effective_demand" | "effective-demand" => Ok(Engine::EffectiveDemand),
            "closed_form" | "closed-form" => Ok(Engine::ClosedForm),
            other => Err(Error::Parse(format!("unknown engine '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingResult {
    /// Storage in the population's energy unit.
    pub storage: f64,
    pub engine: Engine,
    /// Outage probability at `storage` under `engine`.
    pub achieved: f64,
    pub iterations: usize,
    /// Width of the final bisection interval.
    pub bracket: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPowerResult {
    pub grid_power: f64,
    pub engine: Engine,
    pub achieved: f64,
    pub iterations: usize,
    pub bracket: f64,
    pub converged: bool,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("epsilon must lie in (0, 1), got {eps}")))
    }
}

fn single_consumer(pop: &Population, engine: Engine) -> Result<&crate::source_model::ConsumerClass> {
    if pop.n_classes() != 1 || pop.total_users() != 1 {
        return Err(Error::UnsupportedEngine {
            engine: engine.name(),
            detail: format!(
                "closed form needs one consumer of one class, got {} classes and {} consumers",
                pop.n_classes(),
                pop.total_users()
            ),
        });
    }
    Ok(&pop.classes()[0])
}

/// Smallest storage with `P(S > B) <= eps` for a solved model.
pub fn size_from_solution(sol: &SpectralSolution, eps: f64) -> Result<SizingResult> {
    check_eps(eps)?;
    let at_zero = sol.survivor(0.0)?;
    if at_zero <= eps {
        return Ok(SizingResult {
            storage: 0.0,
            engine: Engine::Spectral,
            achieved: at_zero,
            iterations: 0,
            bracket: 0.0,
            converged: true,
        });
    }
    let log_eps = eps.ln();
    let meets = |b: f64| -> Result<bool> {
        let g = sol.survivor(b)?;
        Ok(g <= 0.0 || g.ln() <= log_eps)
    };
    let mut hi = 1.0;
    while !meets(hi)? {
        hi *= 2.0;
        if hi > STORAGE_CEILING {
            return Err(Error::Numerical {
                stage: "storage bracket",
                residual: sol.survivor(hi)?,
            });
        }
    }
    let lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    let bracket = bisect(lo, hi, BRACKET_TOL, MAX_ITERATIONS, meets)?;
    Ok(from_bracket(sol.survivor(bracket.hi)?, bracket))
}

fn from_bracket(achieved: f64, b: Bracket) -> SizingResult {
    SizingResult {
        storage: b.hi,
        engine: Engine::Spectral,
        achieved,
        iterations: b.iterations,
        bracket: b.width(),
        converged: b.converged,
    }
}

/// Smallest storage keeping the outage probability at or below `eps`.
pub fn epsilon_outage_capacity(
    pop: &Population,
    grid_power: f64,
    eps: f64,
    engine: Engine,
) -> Result<SizingResult> {
    check_eps(eps)?;
    let mean = pop.mean_demand();
    if !(grid_power > mean) {
        return Err(Error::Stability {
            mean_demand: mean,
            grid_power,
        });
    }
    match engine {
        Engine::Spectral => {
            let model = build_generator_multi(pop)?;
            let sol = spectral::solve(&model, grid_power)?;
            size_from_solution(&sol, eps)
        }
        Engine::EffectiveDemand => {
            let storage = effective_demand::min_storage(pop, grid_power, eps)?;
            let achieved = if grid_power >= pop.peak_demand() {
                0.0
            } else {
                (dominant_decay_rate(pop, grid_power)? * storage).exp()
            };
            Ok(SizingResult {
                storage,
                engine,
                achieved,
                iterations: 0,
                bracket: BRACKET_TOL,
                converged: true,
            })
        }
        Engine::ClosedForm => {
            let class = single_consumer(pop, engine)?;
            if grid_power >= class.peak_demand {
                return Ok(SizingResult {
                    storage: 0.0,
                    engine,
                    achieved: 0.0,
                    iterations: 0,
                    bracket: 0.0,
                    converged: true,
                });
            }
            let (chi, c, _) = closed_forms::normalize(class, grid_power, 0.0);
            let b = closed_forms::single_user_capacity(chi, c, eps)?.storage;
            Ok(SizingResult {
                storage: closed_forms::denormalize_storage(class, b),
                engine,
                achieved: closed_forms::single_user_overflow(chi, c, b)?,
                iterations: 0,
                bracket: 0.0,
                converged: true,
            })
        }
    }
}

/// Probability that the instantaneous load exceeds `grid_power`.
pub fn load_exceedance(model: &FluidModel, grid_power: f64) -> f64 {
    model
        .loads()
        .iter()
        .zip(model.stationary())
        .filter(|(l, _)| **l > grid_power)
        .map(|(_, p)| p)
        .sum()
}

/// Smallest grid power with `P(S > storage) <= eps`.
pub fn min_grid_power(pop: &Population, storage: f64, eps: f64, engine: Engine) -> Result<GridPowerResult> {
    check_eps(eps)?;
    if !(storage >= 0.0) || !storage.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "storage must be non-negative and finite, got {storage}"
        )));
    }
    let mean = pop.mean_demand();
    let peak = pop.peak_demand();
    let tol = BRACKET_TOL * peak.max(1.0);
    match engine {
        Engine::Spectral => {
            let model = build_generator_multi(pop)?;
            let meets = |c: f64| -> Result<bool> {
                let sol = spectral::solve(&model, c)?;
                Ok(sol.survivor(storage)? <= eps)
            };
            let bracket = bisect(mean, peak, tol, MAX_ITERATIONS, meets)?;
            let sol = spectral::solve(&model, bracket.hi)?;
            Ok(GridPowerResult {
                grid_power: bracket.hi,
                engine,
                achieved: sol.survivor(storage)?,
                iterations: bracket.iterations,
                bracket: bracket.width(),
                converged: bracket.converged,
            })
        }
        Engine::EffectiveDemand => {
            let grid_power = if storage == 0.0 {
                peak
            } else {
                let zeta = eps.ln() / storage;
                effective_demand::effective_load(pop.classes(), pop.counts(), zeta)
            };
            let achieved = if grid_power >= peak {
                0.0
            } else {
                (dominant_decay_rate(pop, grid_power)? * storage).exp()
            };
            Ok(GridPowerResult {
                grid_power,
                engine,
                achieved,
                iterations: 0,
                bracket: 0.0,
                converged: true,
            })
        }
        Engine::ClosedForm => {
            let class = *single_consumer(pop, engine)?;
            let b = storage * class.mu / class.peak_demand;
            let chi = class.chi();
            let meets = |c: f64| -> Result<bool> {
                Ok(closed_forms::single_user_overflow(chi, c, b)? <= eps)
            };
            let bracket = bisect(class.on_probability(), 1.0, BRACKET_TOL, MAX_ITERATIONS, meets)?;
            let achieved = if bracket.hi < 1.0 {
                closed_forms::single_user_overflow(chi, bracket.hi, b)?
            } else {
                0.0
            };
            Ok(GridPowerResult {
                grid_power: bracket.hi * class.peak_demand,
                engine,
                achieved,
                iterations: bracket.iterations,
                bracket: bracket.width() * class.peak_demand,
                converged: bracket.converged,
            })
        }
    }
}

/// Storage saved relative to covering the full-simultaneity shortfall for
/// `support_duration`.
pub fn peak_savings(pop: &Population, grid_power: f64, eps: f64, support_duration: f64) -> Result<f64> {
    let shortfall = (pop.peak_demand() - grid_power).max(0.0);
    let reference = shortfall * support_duration;
    if !(reference > 0.0) {
        return Err(Error::UndefinedSavings(format!(
            "peak-provisioned storage is {reference}: grid power {grid_power} already covers the peak or the duration is not positive"
        )));
    }
    let sized = epsilon_outage_capacity(pop, grid_power, eps, Engine::Spectral)?;
    let savings = 1.0 - sized.storage / reference;
    if savings < 0.0 {
        log::warn!(
            "sized storage {} exceeds the peak-provisioned {}; savings clamped to zero",
            sized.storage,
            reference
        );
    }
    Ok(savings.clamp(0.0, 1.0))
}
