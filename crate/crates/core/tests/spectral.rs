use ess_sizing::sizing::load_exceedance;
use ess_sizing::source_model::{build_generator_multi, build_generator_single, ConsumerClass, Population};
use ess_sizing::spectral::{solve, solve_dense};
use proptest::prelude::*;

fn small_model() -> impl Strategy<Value = (Population, f64)> {
    let class = (0.1f64..2.0, 0.5f64..2.0, 0.2f64..1.5)
        .prop_map(|(l, m, r)| ConsumerClass::new(l, m, r).unwrap());
    (
        prop::collection::vec(class, 1..=2),
        prop::collection::vec(1usize..=8, 2),
        0.05f64..0.95,
    )
        .prop_map(|(classes, counts, frac)| {
            let counts = counts[..classes.len()].to_vec();
            let pop = Population::new(classes, counts).unwrap();
            let (mean, peak) = (pop.mean_demand(), pop.peak_demand());
            let c = mean + frac * (peak - mean);
            (pop, c)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mode_count_and_residuals((pop, c) in small_model()) {
        let model = build_generator_multi(&pop).unwrap();
        let sol = solve(&model, c).unwrap();
        let overload = sol.drift().overload_states().count();
        prop_assert_eq!(sol.mode_count(), overload);
        prop_assert!(sol.eigenvalues().iter().all(|z| *z < 0.0));
        let norm = sol.metadata().generator_norm;
        for r in &sol.metadata().residuals {
            prop_assert!(*r <= 1e-8 * norm, "residual {} vs norm {}", r, norm);
        }
    }

    #[test]
    fn survivor_is_monotone_and_bounded((pop, c) in small_model()) {
        let model = build_generator_multi(&pop).unwrap();
        let sol = solve(&model, c).unwrap();
        let mut previous = 1.0;
        for i in 0..100 {
            let g = sol.survivor(0.2 * i as f64).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!(g <= previous + 1e-14);
            previous = g;
        }
    }

    #[test]
    fn boundary_and_limits((pop, c) in small_model()) {
        let model = build_generator_multi(&pop).unwrap();
        let sol = solve(&model, c).unwrap();
        let f0 = sol.cdf(0.0).unwrap();
        for s in sol.drift().overload_states() {
            prop_assert!(f0[s].abs() < 1e-12);
        }
        // Mass is never lost at zero: the deficit is positive at least while
        // the load exceeds the grid power.
        let g0 = sol.survivor(0.0).unwrap();
        prop_assert!(g0 + 1e-12 >= load_exceedance(&model, sol.drift().grid_power));
        let far = sol.cdf(1e4).unwrap();
        for (f, p) in far.iter().zip(sol.stationary()) {
            prop_assert!((f - p).abs() < 1e-12);
        }
    }

    #[test]
    fn per_state_cdf_nondecreasing((pop, c) in small_model()) {
        let model = build_generator_multi(&pop).unwrap();
        let sol = solve(&model, c).unwrap();
        let mut previous = sol.cdf(0.0).unwrap();
        for x in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let next = sol.cdf(x).unwrap();
            for (a, b) in previous.iter().zip(&next) {
                prop_assert!(b + 1e-14 >= *a);
            }
            previous = next;
        }
    }

    #[test]
    fn flux_identity((pop, c) in small_model()) {
        // Summing the ODE over states: d/dx sum_s d_s F_s(x) = F(x) M 1 = 0.
        let model = build_generator_multi(&pop).unwrap();
        let sol = solve(&model, c).unwrap();
        let d = &sol.drift().drifts;
        let target: f64 = d.iter().zip(sol.stationary()).map(|(a, b)| a * b).sum();
        for x in [0.0, 0.4, 2.5] {
            let f = sol.cdf(x).unwrap();
            let flux: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
            prop_assert!((flux - target).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_oracle_agrees((pop, c) in small_model()) {
        let model = build_generator_multi(&pop).unwrap();
        let fast = solve(&model, c).unwrap();
        let dense = solve_dense(&model, c).unwrap();
        for x in [0.0, 1.0, 4.0] {
            let (a, b) = (fast.survivor(x).unwrap(), dense.survivor(x).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 + 1e-7 * b);
        }
    }
}

#[test]
fn single_user_specialization() {
    for &(lambda, c) in &[(0.3, 0.5), (0.5, 0.7), (0.1, 0.2), (1.5, 0.8)] {
        let class = ConsumerClass::normalized(lambda).unwrap();
        let sol = solve(&build_generator_single(1, &class).unwrap(), c).unwrap();
        let chi = lambda;
        let z1 = chi / c - 1.0 / (1.0 - c);
        let a1 = -chi / (c * (1.0 + chi));
        assert!((sol.eigenvalues()[0] - z1).abs() < 1e-12);
        for b in [0.0, 0.5, 3.0] {
            let want = -a1 * (z1 * b).exp();
            assert!((sol.survivor(b).unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn large_two_class_population() {
    let pop = Population::new(
        vec![
            ConsumerClass::new(0.5, 1.0, 0.5).unwrap(),
            ConsumerClass::new(0.7, 1.0, 1.0).unwrap(),
        ],
        vec![100, 45],
    )
    .unwrap();
    let model = build_generator_multi(&pop).unwrap();
    assert_eq!(model.len(), 101 * 46);
    let sol = solve(&model, 50.0).unwrap();
    assert_eq!(sol.mode_count(), sol.drift().overload_states().count());
    let meta = sol.metadata();
    assert!(meta.condition_number < 1e6, "{}", meta.condition_number);
    assert!(meta.boundary_residual < 1e-12);
    let (g0, g5, g10) = (
        sol.survivor(0.0).unwrap(),
        sol.survivor(5.0).unwrap(),
        sol.survivor(10.0).unwrap(),
    );
    assert!(g0 > g5 && g5 > g10 && g10 > 0.0);
    assert!(g0 + 1e-12 >= load_exceedance(&model, 50.0));
}
