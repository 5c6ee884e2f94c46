//! Single-consumer closed forms and the large-population asymptotic.
//!
//! Everything here works in normalized units: time in mean On durations and
//! power in peak demands. With activity ratio `chi = lambda / mu` and grid
//! power `c` in `(chi / (1 + chi), 1)`, a lone consumer has exactly one
//! decaying mode and the overflow probability is a single exponential.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source_model::ConsumerClass;

fn check_single(chi: f64, c: f64) -> Result<()> {
    if !(chi.is_finite() && chi > 0.0) {
        return Err(Error::ParameterDomain(format!("chi must be positive, got {chi}")));
    }
    let mean = chi / (1.0 + chi);
    if !(c < 1.0) || !c.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "normalized grid power must lie below the peak 1, got {c}"
        )));
    }
    if !(c > mean) {
        return Err(Error::Stability {
            mean_demand: mean,
            grid_power: c,
        });
    }
    Ok(())
}

/// Decay rate of the single mode, `chi / c - 1 / (1 - c)`.
pub fn single_user_decay_rate(chi: f64, c: f64) -> Result<f64> {
    check_single(chi, c)?;
    Ok(chi / c - 1.0 / (1.0 - c))
}

/// `P(S > b)` for one consumer.
pub fn single_user_overflow(chi: f64, c: f64, b: f64) -> Result<f64> {
    let rate = single_user_decay_rate(chi, c)?;
    if !(b >= 0.0) {
        return Err(Error::ParameterDomain(format!("storage must be non-negative, got {b}")));
    }
    Ok(chi / (c * (1.0 + chi)) * (rate * b).exp())
}

/// Normalized storage whose single-consumer overflow equals `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleUserCapacity {
    pub storage: f64,
    /// False when `eps` is already met without storage.
    pub storage_needed: bool,
}

pub fn single_user_capacity(chi: f64, c: f64, eps: f64) -> Result<SingleUserCapacity> {
    check_single(chi, c)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::ParameterDomain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let at_zero = chi / (c * (1.0 + chi));
    if eps >= at_zero {
        log::info!("target {eps} is met without storage (overflow at zero is {at_zero})");
        return Ok(SingleUserCapacity {
            storage: 0.0,
            storage_needed: false,
        });
    }
    let storage = c * (1.0 - c) / (chi - chi * c - c) * (eps * c * (1.0 + chi) / chi).ln();
    Ok(SingleUserCapacity {
        storage,
        storage_needed: true,
    })
}

/// Maps a physical consumer, grid power (kW) and storage (kWh, with rates
/// per hour) onto `(chi, c, b)`.
pub fn normalize(class: &ConsumerClass, grid_power: f64, storage: f64) -> (f64, f64, f64) {
    (
        class.chi(),
        grid_power / class.peak_demand,
        storage * class.mu / class.peak_demand,
    )
}

/// Inverse of the storage part of [`normalize`].
pub fn denormalize_storage(class: &ConsumerClass, b: f64) -> f64 {
    b * class.peak_demand / class.mu
}

/// One support point of a finite grid-power law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityPoint {
    pub capacity: f64,
    pub probability: f64,
}

/// Finite-support law of the grid power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CapacityPoint>", into = "Vec<CapacityPoint>")]
pub struct CapacityDistribution {
    points: Vec<CapacityPoint>,
}

impl TryFrom<Vec<CapacityPoint>> for CapacityDistribution {
    type Error = Error;

    fn try_from(points: Vec<CapacityPoint>) -> Result<Self> {
        CapacityDistribution::new(points)
    }
}

impl From<CapacityDistribution> for Vec<CapacityPoint> {
    fn from(d: CapacityDistribution) -> Self {
        d.points
    }
}

impl CapacityDistribution {
    pub fn new(points: Vec<CapacityPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::ParameterDomain("capacity law has no support points".into()));
        }
        let mut total = 0.0;
        for p in &points {
            if !(p.probability >= 0.0) || !p.capacity.is_finite() {
                return Err(Error::ParameterDomain(format!(
                    "invalid support point ({}, {})",
                    p.capacity, p.probability
                )));
            }
            total += p.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::ParameterDomain(format!(
                "capacity probabilities sum to {total}, not 1"
            )));
        }
        Ok(CapacityDistribution { points })
    }

    pub fn point_mass(capacity: f64) -> Self {
        CapacityDistribution {
            points: vec![CapacityPoint {
                capacity,
                probability: 1.0,
            }],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn points(&self) -> &[CapacityPoint] {
        &self.points
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.capacity * p.probability).sum()
    }

    /// Inverse-CDF draw from a uniform variate in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for p in &self.points {
            acc += p.probability;
            if u < acc {
                return p.capacity;
            }
        }
        self.points.last().map(|p| p.capacity).unwrap_or(f64::NAN)
    }
}

/// Overflow averaged over a random grid power.
pub fn single_user_overflow_random_capacity(
    chi: f64,
    dist: &CapacityDistribution,
    b: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for point in dist.points() {
        let value = single_user_overflow(chi, point.capacity, b).map_err(|e| match e {
            Error::Stability { .. } | Error::ParameterDomain(_) => Error::Stability {
                mean_demand: chi / (1.0 + chi),
                grid_power: point.capacity,
            },
            other => other,
        })?;
        total += point.probability * value;
    }
    Ok(total)
}

/// Parameters of the many-consumer asymptotic, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticParams {
    pub lambda: f64,
    /// Grid power per consumer.
    pub sigma: f64,
    pub n_users: usize,
}

/// Helper values entering the asymptotic expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticHelpers {
    pub f: f64,
    pub u: f64,
    pub phi: f64,
    pub g: f64,
    pub z: f64,
    pub psi: f64,
}

impl AsymptoticParams {
    pub fn new(lambda: f64, sigma: f64, n_users: usize) -> Result<Self> {
        let p = AsymptoticParams {
            lambda,
            sigma,
            n_users,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "grid power per consumer must lie in (0, 1), got {}",
                self.sigma
            )));
        }
        if self.n_users == 0 {
            return Err(Error::ParameterDomain("population must be non-empty".into()));
        }
        if !(self.upsilon() > 0.0) {
            return Err(Error::Stability {
                mean_demand: self.lambda / (1.0 + self.lambda),
                grid_power: self.sigma,
            });
        }
        Ok(())
    }

    /// Headroom per consumer above the mean demand.
    pub fn upsilon(&self) -> f64 {
        self.sigma - self.lambda / (1.0 + self.lambda)
    }

    /// Storage per consumer at a given total level.
    pub fn kappa(&self, level: f64) -> f64 {
        level / self.n_users as f64
    }

    fn blend(&self) -> f64 {
        self.sigma + self.lambda * (1.0 - self.sigma)
    }

    /// Evaluates the helper functions as printed, without simplification.
    pub fn helpers(&self) -> Result<AsymptoticHelpers> {
        let (l, s) = (self.lambda, self.sigma);
        let a = self.blend();
        let excess = s * (1.0 + l) - l;

        let ratio = s / (l * (1.0 - s));
        if !(ratio > 0.0) {
            return Err(Error::Domain {
                helper: "f",
                detail: format!("log argument {ratio} is not positive"),
            });
        }
        let f = ratio.ln() - 2.0 * excess / a;
        if !(f > 0.0) {
            return Err(Error::Domain {
                helper: "f",
                detail: format!("f = {f} is not positive"),
            });
        }

        let u = excess / (s * (1.0 - l));
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::Domain {
                helper: "u",
                detail: format!("u = {u} is not a positive finite number"),
            });
        }

        // The two sigma*log(sigma) terms cancel; kept as printed.
        let phi = s * s.ln() + (1.0 - s) * (1.0 - s).ln() - s * s.ln() + (1.0 + l).ln();

        let z = (1.0 - l) + l * (1.0 - 2.0 * s) / a;
        let psi = (2.0 * s - 1.0) * excess.powi(3) / (s * (1.0 - s).powi(2) * a.powi(3));
        let g = z + 0.5 * a * psi * (1.0 - s) / f;

        Ok(AsymptoticHelpers {
            f,
            u,
            phi,
            g,
            z,
            psi,
        })
    }
}

/// Diagnostic-grade large-population approximation of `P(S > x)`.
///
/// The printed expression is evaluated verbatim and clamped to `[0, 1]`. It
/// does not agree closely with the exact solver; treat it as a rough guide.
pub fn asymptotic_survivor(p: &AsymptoticParams, level: f64) -> Result<f64> {
    p.validate()?;
    if !(level >= 0.0) {
        return Err(Error::Domain {
            helper: "level",
            detail: format!("level must be non-negative, got {level}"),
        });
    }
    let h = p.helpers()?;
    let n = p.n_users as f64;
    let fa = h.f * p.blend();
    let prefactor = 0.5 * (h.u / (PI * fa * n)).sqrt();
    let value = prefactor * (-n * h.phi - h.g * level).exp() * (-2.0 * (fa * n * level).sqrt()).exp();
    Ok(value.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn overflow_examples() {
        assert!(close(single_user_overflow(0.5, 0.5, 0.0).unwrap(), 2.0 / 3.0, 1e-14));
        let v = single_user_overflow(0.5, 0.5, 2.0).unwrap();
        assert!(close(v, 2.0 / 3.0 * (-2.0f64).exp(), 1e-14));
        assert!((v - 0.09022).abs() < 5e-6);
    }

    #[test]
    fn overflow_errors() {
        assert!(matches!(
            single_user_overflow(1.0, 0.4, 1.0),
            Err(Error::Stability { .. })
        ));
        assert!(single_user_overflow(0.5, 1.2, 1.0).is_err());
        assert!(single_user_overflow(0.5, 0.5, -1.0).is_err());
    }

    #[test]
    fn capacity_examples() {
        let eps = 2.0 / 3.0 * (-1.0f64).exp();
        let b = single_user_capacity(0.5, 0.5, eps).unwrap();
        assert!(b.storage_needed);
        assert!(close(b.storage, 1.0, 1e-12));
        let b = single_user_capacity(0.5, 0.5, 0.01).unwrap().storage;
        assert!(close(b, -(1.5f64 * 0.01).ln(), 1e-12));
        assert!((b - 4.1997).abs() < 5e-5);
    }

    #[test]
    fn capacity_without_storage() {
        let b = single_user_capacity(0.5, 0.5, 0.7).unwrap();
        assert_eq!(b.storage, 0.0);
        assert!(!b.storage_needed);
    }

    #[test]
    fn normalization_round_trip() {
        let class = ConsumerClass::new(0.3, 2.0, 6.6).unwrap();
        let (chi, c, b) = normalize(&class, 3.3, 13.2);
        assert!(close(chi, 0.15, 1e-15));
        assert!(close(c, 0.5, 1e-15));
        assert!(close(b, 4.0, 1e-15));
        assert!(close(denormalize_storage(&class, b), 13.2, 1e-15));
    }

    #[test]
    fn random_capacity_examples() {
        let point = CapacityDistribution::point_mass(0.5);
        assert_eq!(
            single_user_overflow_random_capacity(0.3, &point, 1.0).unwrap(),
            single_user_overflow(0.3, 0.5, 1.0).unwrap()
        );
        let two = CapacityDistribution::from_json(
            r#"[{"capacity":0.4,"probability":0.5},{"capacity":0.6,"probability":0.5}]"#,
        )
        .unwrap();
        let expected = 0.5
            * (single_user_overflow(0.3, 0.4, 1.0).unwrap()
                + single_user_overflow(0.3, 0.6, 1.0).unwrap());
        assert!(close(
            single_user_overflow_random_capacity(0.3, &two, 1.0).unwrap(),
            expected,
            1e-14
        ));
    }

    #[test]
    fn random_capacity_rejects_unstable_point() {
        let law = CapacityDistribution::new(vec![
            CapacityPoint {
                capacity: 0.2,
                probability: 0.5,
            },
            CapacityPoint {
                capacity: 0.6,
                probability: 0.5,
            },
        ])
        .unwrap();
        match single_user_overflow_random_capacity(0.3, &law, 1.0) {
            Err(Error::Stability { grid_power, .. }) => assert_eq!(grid_power, 0.2),
            other => panic!("expected stability error, got {other:?}"),
        }
        assert!(CapacityDistribution::from_json(r#"[{"capacity":0.5,"probability":0.7}]"#).is_err());
    }

    #[test]
    fn quantile_walks_support() {
        let law = CapacityDistribution::new(vec![
            CapacityPoint {
                capacity: 1.0,
                probability: 0.25,
            },
            CapacityPoint {
                capacity: 2.0,
                probability: 0.75,
            },
        ])
        .unwrap();
        assert_eq!(law.quantile(0.1), 1.0);
        assert_eq!(law.quantile(0.3), 2.0);
        assert!(close(law.mean(), 1.75, 1e-15));
    }

    #[test]
    fn asymptotic_helpers_match_direct_evaluation() {
        let p = AsymptoticParams::new(0.3, 0.2658, 200).unwrap();
        let h = p.helpers().unwrap();
        assert!(close(h.f, 0.000551205995871, 1e-9));
        assert!(close(h.u, 0.244759754917769, 1e-12));
        assert!(close(h.phi, 0.0355156946930653, 1e-12));
        assert!(close(h.z, 0.989100111097395, 1e-12));
        assert!(close(h.psi, -0.00268870144527274, 1e-9));
        assert!(close(h.g, 0.118732112556619, 1e-8));
        assert!(close(p.upsilon(), 0.2658 - 0.3 / 1.3, 1e-15));
        assert!(close(p.kappa(10.0), 0.05, 1e-15));
    }

    #[test]
    fn asymptotic_domain_errors() {
        // lambda above 1 flips the sign of u.
        let p = AsymptoticParams::new(2.0, 0.8, 100).unwrap();
        match asymptotic_survivor(&p, 1.0) {
            Err(Error::Domain { helper, .. }) => assert_eq!(helper, "u"),
            other => panic!("expected domain error, got {other:?}"),
        }
        // lambda = 1 makes u divide by zero.
        let p = AsymptoticParams::new(1.0, 0.7, 100).unwrap();
        match asymptotic_survivor(&p, 1.0) {
            Err(Error::Domain { helper, .. }) => assert_eq!(helper, "u"),
            other => panic!("expected domain error, got {other:?}"),
        }
        let p = AsymptoticParams::new(0.3, 0.2658, 100).unwrap();
        assert!(asymptotic_survivor(&p, -1.0).is_err());
        assert!(AsymptoticParams::new(0.3, 0.2, 100).is_err());
        assert!(AsymptoticParams::new(0.3, 1.2, 100).is_err());
    }

    #[test]
    fn asymptotic_monotone_in_level() {
        let p = AsymptoticParams::new(0.3, 0.2658, 200).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=200 {
            let v = asymptotic_survivor(&p, i as f64 * 0.25).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }
}
