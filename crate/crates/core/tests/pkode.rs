use pkml::pkode::{
    integrate_fn, simulate_profile, two_compartment_rhs, uniform_grid, Method, SolverConfig, TwoCompartmentParams,
};
use proptest::prelude::*;

fn decay_error(step: f64) -> f64 {
    let grid = [0.0, 1.0];
    let out = integrate_fn(|_, y| Ok(vec![-y[0]]), vec![1.0], &grid, &SolverConfig::rk4(step)).unwrap();
    (out[1][0] - (-1f64).exp()).abs()
}

#[test]
fn rk4_order_on_exponential_decay() {
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = steps.iter().map(|&h| decay_error(h)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.5..=4.5).contains(&order), "order {order}");
    }
    assert!(decay_error(0.01) <= 1e-8);
}

#[test]
fn euler_is_first_order() {
    let grid = [0.0, 1.0];
    let err = |h: f64| {
        let out = integrate_fn(|_, y| Ok(vec![-y[0]]), vec![1.0], &grid, &SolverConfig::euler(h)).unwrap();
        (out[1][0] - (-1f64).exp()).abs()
    };
    let order = (err(0.01) / err(0.005)).log2();
    assert!((0.9..=1.1).contains(&order), "order {order}");
}

fn params() -> impl Strategy<Value = TwoCompartmentParams> {
    (0.5..20.0f64, 5.0..80.0f64, 5.0..120.0f64, 0.5..20.0f64).prop_map(|(cl, v1, v2, q)| TwoCompartmentParams {
        cl,
        v1,
        v2,
        q,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_mass_conserved_without_clearance(mut p in params(), dose in 1.0..500.0f64) {
        p.cl = 0.0;
        let grid = uniform_grid(50, 24.0);
        let cfg = SolverConfig::subdivided(Method::Rk4, &grid, 10).unwrap();
        let out = integrate_fn(
            |_, y| Ok(two_compartment_rhs([y[0], y[1]], &p)?.to_vec()),
            vec![dose, 0.0],
            &grid,
            &cfg,
        ).unwrap();
        for y in out {
            prop_assert!(((y[0] + y[1]) - dose).abs() <= 1e-9 * dose);
        }
    }

    #[test]
    fn bolus_profiles_are_positive_and_start_at_dose_over_v1(p in params(), dose in 1.0..500.0f64) {
        let grid = uniform_grid(50, 24.0);
        let cfg = SolverConfig::subdivided(Method::Rk4, &grid, 10).unwrap();
        let prof = simulate_profile(&p, dose, &grid, &cfg).unwrap();
        prop_assert_eq!(prof.concentrations[0], dose / p.v1);
        prop_assert!(prof.concentrations.iter().all(|c| *c > 0.0 && c.is_finite()));
        // with clearance the terminal phase decreases
        let n = prof.len();
        prop_assert!(prof.concentrations[n - 1] < prof.concentrations[0]);
    }

    #[test]
    fn simulation_is_deterministic(p in params()) {
        let grid = uniform_grid(50, 24.0);
        let cfg = SolverConfig::subdivided(Method::Rk4, &grid, 10).unwrap();
        let a = simulate_profile(&p, 100.0, &grid, &cfg).unwrap();
        let b = simulate_profile(&p, 100.0, &grid, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
