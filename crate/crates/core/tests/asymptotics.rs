use emission_core::optimal_path::{
    balance_ratio, build_bundle, chaos_gap, emission_shares, solve_tilt_for_target, SearchOptions, Tilt,
};
use emission_core::{RateParams, TimeGrid};

fn unit() -> RateParams {
    RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap()
}

#[test]
fn extreme_tilt_bundle_terminates() {
    let p = unit();
    let grid = TimeGrid::uniform(1.0, 257).unwrap();
    for stim in [1e8, 1e12, 1e16] {
        let tilt = Tilt::from_factors(&p, 0.0, stim).unwrap();
        let bundle = build_bundle(&p, &tilt, 0.5, &grid).unwrap();
        assert!(bundle.rate.is_finite() && bundle.emission.is_finite());
    }
}

#[test]
fn large_emission_scan_trends() {
    let p = unit();
    let mut rows = Vec::new();
    for b in [1e2, 1e3, 1e4] {
        let sol = solve_tilt_for_target(&p, 0.5, b, &SearchOptions::default()).unwrap();
        let bd = sol.bundle;
        let quad = bd.quadrature_rate().unwrap();
        assert!((quad - bd.rate).abs() <= 1e-4 * bd.rate, "B = {b}: {quad} vs {}", bd.rate);
        let (alpha, beta) = emission_shares(&bd);
        rows.push((b, bd.tilt.r2 / b, balance_ratio(&bd), chaos_gap(&bd, 0.25).unwrap(), alpha, beta, bd.x1_bar));
    }
    for w in rows.windows(2) {
        assert!(w[1].2 < w[0].2, "balance ratio must decrease");
        assert!(w[1].3 <= w[0].3, "chaos gap must not increase");
        assert!(w[1].4 < w[0].4, "spontaneous share must decrease");
    }
    let c = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    assert!(c > 0.0 && c < 1.0, "r2/B bound {c}");
    let (_, _, _, _, alpha, beta, x1_bar) = rows[2];
    let lhs = (alpha + 0.5 * beta).sqrt() / (alpha + beta);
    let rhs = p.lambda.sqrt() * p.horizon * x1_bar;
    assert!((lhs - rhs).abs() <= 0.05 * rhs, "{lhs} vs {rhs}");
}
