use emission_core::exact::{rare_event_prob, ExactOptions};
use emission_core::optimal_path::{build_bundle, solve_tilt_for_target, SearchOptions, Tilt};
use emission_core::ratefn::path_rate;
use emission_core::ssa::{emission_tail_mc, ssa_batch};
use emission_core::{fluid_solve, MicroState, RateParams, ScaledState, TimeGrid};

fn unit(horizon: f64) -> RateParams {
    RateParams::new(1.0, 1.0, 1.0, horizon).unwrap()
}

#[test]
fn ssa_mean_tracks_fluid_at_moderate_n() {
    let p = unit(2.0);
    let grid = TimeGrid::uniform(2.0, 21).unwrap();
    let init = MicroState::initial(0, 2000).unwrap();
    let summary = ssa_batch(&p, &init, 50, 3, &grid).unwrap();
    let fluid = fluid_solve(&p, &ScaledState::excited(0.0).unwrap(), &grid).unwrap();
    for (m, f) in summary.mean.iter().zip(&fluid.states) {
        assert!((m.x1 - f.x1).abs() < 0.01, "{} vs {}", m.x1, f.x1);
        assert!((m.x2 - f.x2).abs() < 0.02);
        assert!((m.x3 - f.x3).abs() < 0.04);
    }
}

#[test]
fn plain_monte_carlo_agrees_with_exact_on_a_typical_event() {
    let p = unit(1.0);
    let init = MicroState::initial(5, 10).unwrap();
    let exact = rare_event_prob(&p, &init, 10, &ExactOptions::default()).unwrap();
    let mc = emission_tail_mc(&p, &init, 10, 20_000, 9).unwrap();
    assert!(exact > 0.05 && exact < 0.95, "{exact}");
    assert!((mc.mean - exact).abs() < 4.0 * mc.std_error, "{mc:?} vs {exact}");
}

#[test]
fn bundle_rate_matches_lagrangian_quadrature() {
    let p = unit(1.0);
    let sol = solve_tilt_for_target(&p, 0.5, 3.0, &SearchOptions::default()).unwrap();
    let bundle = &sol.bundle;
    let quad = path_rate(&bundle.path_samples(), &p).unwrap();
    assert!((quad - bundle.rate).abs() <= 1e-4 * bundle.rate, "{quad} vs {}", bundle.rate);
    assert!(bundle.energy_residual() <= 1e-6 * (1.0 + bundle.energy.abs()));
    assert!((bundle.emission - 3.0).abs() < 1e-9);
}

#[test]
fn zero_tilt_bundle_is_the_fluid_path() {
    let p = unit(1.5);
    let grid = TimeGrid::uniform(1.5, 301).unwrap();
    let bundle = build_bundle(&p, &Tilt::zero(&p).unwrap(), 0.2, &grid).unwrap();
    let fluid = fluid_solve(&p, &ScaledState::excited(0.2).unwrap(), &grid).unwrap();
    for (i, f) in fluid.states.iter().enumerate() {
        assert!((bundle.x1[i] - f.x1).abs() < 1e-8);
        assert!((bundle.x2[i] - f.x2).abs() < 1e-8);
        assert!((bundle.x3[i] - f.x3).abs() < 1e-8);
    }
    assert!(bundle.rate.abs() < 1e-10);
}

#[test]
fn exact_tail_is_monotone_in_threshold_and_horizon() {
    let init = MicroState::initial(3, 8).unwrap();
    let opts = ExactOptions::default();
    let short = unit(0.5);
    let long = unit(1.0);
    let mut prev = 1.0;
    for a in 0..20 {
        let p = rare_event_prob(&long, &init, a, &opts).unwrap();
        assert!(p <= prev + 1e-12);
        let q = rare_event_prob(&short, &init, a, &opts).unwrap();
        assert!(q <= p + 1e-12);
        prev = p;
    }
}
