use ess_sizing::economics::{
    annualized_storage_cost, breakeven_population, cost_table, scenario_cost, CostCase, EconScenario,
    Sizer, TariffBook, DEFAULT_BREAKEVEN_CAP,
};
use ess_sizing::sizing::Engine;
use ess_sizing::source_model::Population;
use ess_sizing::Result;

const LAMBDAS: [f64; 3] = [0.25, 0.45, 0.65];

fn scenario(case: CostCase, lambda: f64, n: usize) -> EconScenario {
    EconScenario::new(case, lambda, n)
}

#[test]
fn breakeven_ordering() {
    let book = TariffBook::default();
    let found: Vec<usize> = LAMBDAS
        .iter()
        .map(|&l| {
            let b = breakeven_population(&scenario(CostCase::Shared, l, 1), &book, &Engine::EffectiveDemand, DEFAULT_BREAKEVEN_CAP)
                .unwrap();
            assert!(b.monotone);
            assert!(b.shared_cost < b.grid_only_cost);
            assert!(b.previous_shared_cost.is_none_or(|p| p >= b.grid_only_cost));
            b.n_users.expect("breakeven exists")
        })
        .collect();
    println!("breakeven populations: {found:?}");
    assert!(found[0] > found[1] && found[1] > found[2]);
}

#[test]
fn standalone_storage_is_costlier_than_grid() {
    let book = TariffBook::default();
    for l in LAMBDAS {
        let grid = scenario_cost(&scenario(CostCase::GridOnly, l, 1), &book, &Engine::EffectiveDemand).unwrap();
        let ess = scenario_cost(&scenario(CostCase::EssOnly, l, 1), &book, &Engine::EffectiveDemand).unwrap();
        assert!(ess.total > grid.total, "lambda={l}: {} vs {}", ess.total, grid.total);
    }
}

#[test]
fn shared_cost_strictly_decreasing() {
    let book = TariffBook::default();
    let sizes: Vec<usize> = (1..=60).collect();
    for l in LAMBDAS {
        let table = cost_table(&scenario(CostCase::Shared, l, 1), &book, &Engine::EffectiveDemand, &sizes).unwrap();
        let shared: Vec<f64> = table.iter().map(|row| row[2].total).collect();
        assert!(shared.windows(2).all(|w| w[1] < w[0]), "lambda={l}");
    }
}

#[test]
fn spectral_sizer_gives_decreasing_shared_cost() {
    let book = TariffBook::default();
    let sizes = [1, 2, 4, 8, 16];
    let table = cost_table(&scenario(CostCase::Shared, 0.45, 1), &book, &Engine::Spectral, &sizes).unwrap();
    let shared: Vec<f64> = table.iter().map(|row| row[2].total).collect();
    assert!(shared.windows(2).all(|w| w[1] < w[0]), "{shared:?}");
}

#[test]
fn free_storage_breaks_even_immediately() {
    let mut s = scenario(CostCase::Shared, 0.45, 1);
    s.storage_annual_cost = 0.0;
    let b = breakeven_population(&s, &TariffBook::default(), &Engine::EffectiveDemand, 100).unwrap();
    assert_eq!(b.n_users, Some(1));
}

#[test]
fn vanishing_usage_never_breaks_even() {
    let s = scenario(CostCase::Shared, 1e-6, 1);
    let b = breakeven_population(&s, &TariffBook::default(), &Engine::EffectiveDemand, DEFAULT_BREAKEVEN_CAP).unwrap();
    assert_eq!(b.n_users, None);
}

#[test]
fn single_user_shared_cost_approaches_standalone() {
    // The single-user ratio is fixed at one, so any sizer will do.
    let constant = |_: &Population, _: f64, _: f64| -> Result<f64> { Ok(1.0) };
    let book = TariffBook::default();
    let mut shared = scenario(CostCase::Shared, 0.45, 1);
    shared.grid_headroom = 1e-9;
    let mut ess = shared.clone();
    ess.case = CostCase::EssOnly;
    let a = scenario_cost(&shared, &book, &constant as &dyn Sizer).unwrap().total;
    let b = scenario_cost(&ess, &book, &constant as &dyn Sizer).unwrap().total;
    assert!((a - b).abs() <= 0.1 * b, "{a} vs {b}");
}

#[test]
fn breakdowns_sum_to_total() {
    let book = TariffBook::default();
    let table = cost_table(&scenario(CostCase::Shared, 0.25, 1), &book, &Engine::EffectiveDemand, &[1, 5, 30]).unwrap();
    for row in &table {
        for b in row {
            assert_eq!(b.total, b.grid_energy + b.storage_energy + b.storage + b.power_quality + b.reliability);
        }
    }
}

#[test]
fn grid_only_energy_term() {
    let b = scenario_cost(&scenario(CostCase::GridOnly, 0.25, 1), &TariffBook::default(), &Engine::EffectiveDemand).unwrap();
    let energy: f64 = 15.0 * 1.2 * (0.25 / 1.25) * 1.0 * 250.0 / 12.0;
    assert!((energy - 75.0).abs() < 1e-12);
    assert!((b.grid_energy - energy * 0.25).abs() < 1e-9);
}

#[test]
fn capital_recovery_examples() {
    assert!((annualized_storage_cost(1000.0, 1.0, 0.10).unwrap() - 1100.0).abs() < 1e-9);
    assert!((annualized_storage_cost(11408.50, 15.0, 0.10).unwrap() - 1500.0).abs() < 0.5);
    let limit = annualized_storage_cost(1500.0, 15.0, 1e-12).unwrap();
    assert!((limit - 100.0).abs() < 1e-6);
}

#[test]
fn capex_replaces_annual_cost() {
    let book = TariffBook::default();
    let mut s = scenario(CostCase::EssOnly, 0.25, 1);
    s.storage_capex = Some(11408.50);
    let with_capex = scenario_cost(&s, &book, &Engine::EffectiveDemand).unwrap();
    assert!((with_capex.storage - 1500.0 / 12.0).abs() < 0.05);
}

#[test]
fn tariff_book_override() {
    let mut book = TariffBook::default();
    book.tou_rates.residential.summer.peak = 0.5;
    let text = serde_json::to_string(&book).unwrap();
    let back = TariffBook::from_json(&text).unwrap();
    let b = scenario_cost(&scenario(CostCase::GridOnly, 0.25, 1), &back, &Engine::EffectiveDemand).unwrap();
    assert!((b.grid_energy - 75.0 * 0.5).abs() < 1e-9);
}
