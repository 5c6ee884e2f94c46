use ess_sizing::closed_forms::{
    single_user_overflow, single_user_overflow_random_capacity, CapacityDistribution, CapacityPoint,
};
use ess_sizing::simulator::{estimate_survivor, simulate, SimConfig};
use ess_sizing::source_model::{build_generator_multi, ConsumerClass, Population};
use ess_sizing::spectral::solve;
use ess_sizing::Error;

fn single(lambda: f64) -> Population {
    Population::single(ConsumerClass::normalized(lambda).unwrap(), 1).unwrap()
}

fn within(estimate: f64, se: f64, want: f64, k: f64) -> bool {
    (estimate - want).abs() <= k * se
}

#[test]
fn single_user_matches_closed_form() {
    let cfg = SimConfig::new(single(0.5), 0.5, 80_000.0, 20, 11);
    let levels = [0.0, 1.0, 2.0, 4.0];
    let summary = simulate(&cfg, &levels).unwrap();
    assert!(summary.events >= 1_000_000, "{}", summary.events);
    let se = summary.std_errors.as_ref().unwrap();
    for (i, &x) in levels.iter().enumerate() {
        let want = single_user_overflow(0.5, 0.5, x).unwrap();
        assert!(within(summary.estimates[i], se[i], want, 3.0), "x={x}: {} ± {} vs {want}", summary.estimates[i], se[i]);
    }
}

#[test]
fn zero_level_matches_spectral_and_exceeds_overload_mass() {
    let pop = Population::new(
        vec![ConsumerClass::new(0.4, 1.0, 0.6).unwrap(), ConsumerClass::new(0.8, 1.2, 1.0).unwrap()],
        vec![4, 3],
    )
    .unwrap();
    let c = 2.9;
    let model = build_generator_multi(&pop).unwrap();
    let sol = solve(&model, c).unwrap();
    let overload: f64 = sol.drift().overload_states().map(|s| model.stationary()[s]).sum();
    let cfg = SimConfig::new(pop, c, 20_000.0, 16, 5);
    let est = estimate_survivor(&cfg, &[0.0]).unwrap();
    let want = sol.survivor(0.0).unwrap();
    assert!(within(est[0].estimate, est[0].std_error, want, 3.0), "{:?} vs {want}", est[0]);
    assert!(est[0].estimate > overload);
}

#[test]
fn same_seed_is_bit_identical() {
    let cfg = SimConfig::new(Population::normalized(0.3, 6).unwrap(), 2.1, 2_000.0, 6, 42);
    let a = simulate(&cfg, &[0.0, 0.5, 1.0]).unwrap();
    let b = simulate(&cfg, &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(a, b);
    let other = simulate(&SimConfig { seed: 43, ..cfg }, &[0.0, 0.5, 1.0]).unwrap();
    assert_ne!(a.estimates, other.estimates);
}

#[test]
fn doubling_replications_shrinks_error() {
    let pop = Population::normalized(0.3, 5).unwrap();
    let base = SimConfig::new(pop, 1.9, 3_000.0, 40, 7);
    let doubled = SimConfig { replications: 80, ..base.clone() };
    let a = estimate_survivor(&base, &[0.5]).unwrap()[0].std_error;
    let b = estimate_survivor(&doubled, &[0.5]).unwrap()[0].std_error;
    let ratio = b / a;
    assert!((0.5..=0.9).contains(&ratio), "{ratio}");
}

#[test]
fn occupancy_matches_stationary_distribution() {
    let pop = Population::new(
        vec![ConsumerClass::new(0.3, 1.0, 1.0).unwrap(), ConsumerClass::new(0.5, 1.0, 0.5).unwrap()],
        vec![3, 2],
    )
    .unwrap();
    let model = build_generator_multi(&pop).unwrap();
    let cfg = SimConfig::new(pop, 2.5, 10_000.0, 20, 3);
    let summary = simulate(&cfg, &[]).unwrap();
    let se = summary.occupancy_std_errors.unwrap();
    for (s, (&got, &want)) in summary.occupancy.iter().zip(model.stationary()).enumerate() {
        assert!(within(got, se[s], want, 3.0), "state {s}: {got} ± {} vs {want}", se[s]);
    }
    let total: f64 = summary.occupancy.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn estimates_nonincreasing_in_level() {
    let cfg = SimConfig::new(Population::normalized(0.4, 8).unwrap(), 3.0, 2_000.0, 2, 9);
    let levels: Vec<f64> = (0..20).map(|i| 0.25 * i as f64).collect();
    let summary = simulate(&cfg, &levels).unwrap();
    assert!(summary.estimates.windows(2).all(|w| w[1] <= w[0]));
    assert!(summary.mean_deficit >= 0.0 && summary.mean_square_deficit >= summary.mean_deficit.powi(2) - 1e-12);
}

#[test]
fn no_demand_means_no_deficit() {
    let pop = Population::single(ConsumerClass::new(1e-12, 1.0, 1.0).unwrap(), 5).unwrap();
    let summary = simulate(&SimConfig::new(pop, 0.5, 1_000.0, 3, 1), &[0.1, 1.0]).unwrap();
    assert!(summary.estimates.iter().all(|&g| g == 0.0));
}

#[test]
fn power_above_peak_never_depletes() {
    let pop = Population::normalized(0.6, 4).unwrap();
    let summary = simulate(&SimConfig::new(pop, 4.0, 1_000.0, 3, 2), &[0.0, 1e-9, 1.0]).unwrap();
    assert!(summary.estimates.iter().all(|&g| g == 0.0));
    assert_eq!(summary.mean_deficit, 0.0);
}

#[test]
fn random_capacity_matches_quadrature() {
    let law = CapacityDistribution::new(vec![
        CapacityPoint { capacity: 0.4, probability: 0.5 },
        CapacityPoint { capacity: 0.6, probability: 0.5 },
    ])
    .unwrap();
    let want = single_user_overflow_random_capacity(0.3, &law, 1.0).unwrap();
    let cfg = SimConfig {
        capacity_law: Some(law),
        ..SimConfig::new(single(0.3), 0.5, 10_000.0, 400, 17)
    };
    let est = estimate_survivor(&cfg, &[1.0]).unwrap()[0];
    assert!(within(est.estimate, est.std_error, want, 3.0), "{est:?} vs {want}");
}

#[test]
fn single_replication_cannot_estimate_error() {
    let cfg = SimConfig::new(single(0.3), 0.5, 100.0, 1, 1);
    assert!(matches!(estimate_survivor(&cfg, &[0.0]), Err(Error::Estimator(_))));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = SimConfig::new(Population::normalized(0.3, 4).unwrap(), 1.5, 500.0, 4, 99);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: SimConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}
