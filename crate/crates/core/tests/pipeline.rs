use alphascreen::factor::estimate_alpha;
use alphascreen::methods::{run_method, Method, MethodOptions};
use alphascreen::panel::{check_alignment, FactorPanel, ReturnPanel};
use alphascreen::simulation::{builtin, generate_panel, replication_rng, GeneratedPanel, SimulationScenario};
use alphascreen::testing::{split_statistics, SplitOptions};
use approx::assert_abs_diff_eq;

fn small() -> SimulationScenario {
    let mut sc = builtin::table1_normal();
    sc.p = 200;
    sc.n = 120;
    sc.nu = 0.6;
    sc
}

fn panel(sc: &SimulationScenario, rep: usize) -> GeneratedPanel {
    generate_panel(sc, &mut replication_rng(sc.seed, rep)).unwrap()
}

#[test]
fn csv_round_trip_preserves_estimates() {
    let g = panel(&small(), 0);
    let (mut xr, mut fr) = (Vec::new(), Vec::new());
    g.returns.write_csv(&mut xr).unwrap();
    g.factors.write_csv(&mut fr).unwrap();
    let x = ReturnPanel::parse_csv(std::str::from_utf8(&xr).unwrap(), "returns").unwrap();
    let f = FactorPanel::parse_csv(std::str::from_utf8(&fr).unwrap(), "factors").unwrap();
    assert_eq!(x, g.returns);
    assert_eq!(f, g.factors);
    check_alignment(&x, &f).unwrap();
    let a = estimate_alpha(&x, &f, None).unwrap();
    let b = estimate_alpha(&g.returns, &g.factors, None).unwrap();
    assert_eq!(a.alpha_hat, b.alpha_hat);
}

#[test]
fn every_method_runs_on_a_simulated_panel() {
    let g = panel(&small(), 1);
    let opts = MethodOptions { sn_paths: 2000, ..Default::default() };
    for m in Method::ALL {
        let out = run_method(m, &g.returns, &g.factors, 0.1, &opts).unwrap();
        assert_eq!(out.alpha_hat.len(), 200, "{m}");
        assert!(out.rejected.windows(2).all(|w| w[0] < w[1]), "{m}");
        let mut csv = Vec::new();
        out.write_csv(g.returns.entity_ids(), &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 201, "{m}");
    }
}

#[test]
fn strong_signals_are_found_by_the_split_test() {
    let g = panel(&small(), 2);
    let s = split_statistics(&g.returns, &g.factors, &SplitOptions::default()).unwrap();
    let res = s.select(0.1).unwrap();
    let hits = res.rejected.iter().filter(|i| g.truth.contains(i)).count();
    assert!(hits * 2 > g.truth.len(), "{hits} of {}", g.truth.len());
}

#[test]
fn split_statistics_flip_sign_with_the_panel() {
    // Negating returns negates both halves and leaves the product unchanged.
    let g = panel(&small(), 3);
    let neg = ReturnPanel::new(
        -g.returns.values(),
        g.returns.entity_ids().to_vec(),
        g.returns.time_index().to_vec(),
    )
    .unwrap();
    let a = split_statistics(&g.returns, &g.factors, &SplitOptions::default()).unwrap();
    let b = split_statistics(&neg, &g.factors, &SplitOptions::default()).unwrap();
    assert_abs_diff_eq!(a.t1, -&b.t1, epsilon = 1e-8);
    assert_abs_diff_eq!(a.t_prod, b.t_prod, epsilon = 1e-8);
}

#[test]
fn builtin_scenarios_validate_and_round_trip() {
    for sc in [
        builtin::table1_normal(),
        builtin::table1_lognormal(),
        builtin::table2_garch_arma(),
        builtin::figure1_hetero(),
        builtin::dense_alpha(),
    ] {
        sc.validate().unwrap();
        let again = SimulationScenario::from_json(&sc.to_json().unwrap()).unwrap();
        assert_eq!(again.to_json().unwrap(), sc.to_json().unwrap());
    }
}
