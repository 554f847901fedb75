//! Minimal-rate path achieving a prescribed total emission.
//!
//! The search runs over the spontaneous share `σ = x2(T) / B`. For fixed `σ`
//! the split `μe^{κ2} : 2νe^{2κ3} = σ : (1 − σ)` leaves a single emission
//! factor `c = μe^{κ2} + 2νe^{2κ3}`, found by bisection on `ln c` so that
//! `x2(T) + x3(T)` hits the target. The rate is then minimized over `σ` by
//! golden-section search.

use log::warn;
use serde::Serialize;

use super::bundle::{build_bundle, march, OptimalPathBundle};
use super::riccati::Tilt;
use crate::error::{Error, Result};
use crate::model::{RateParams, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    pub grid_points: usize,
    /// Final bracket width on the spontaneous share.
    pub share_tol: f64,
    /// Relative accuracy of the emission match.
    pub emission_rel_tol: f64,
    /// Step-halving tolerance on the rate before a warning is logged.
    pub richardson_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 2048,
            share_tol: 1e-6,
            emission_rel_tol: 1e-10,
            richardson_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TiltSolution {
    pub bundle: OptimalPathBundle,
    pub spont_share: f64,
    /// `|I − I_half| / |I|` with `I_half` from every other grid point.
    pub richardson_rel_change: f64,
    /// Number of path evaluations spent.
    pub evaluations: usize,
}

/// Emission of the fluid limit on the given grid.
pub fn fluid_emission(params: &RateParams, x1_0: f64, grid: &TimeGrid) -> Result<f64> {
    let m = march(params, &Tilt::zero(params)?, x1_0, grid)?;
    Ok((params.mu + 2.0 * params.nu) * m.kernel.last().unwrap())
}

struct Problem<'a> {
    params: &'a RateParams,
    x1_0: f64,
    grid: &'a TimeGrid,
    target: f64,
    rel_tol: f64,
    evaluations: usize,
}

impl Problem<'_> {
    fn tilt_for(&self, share: f64, log_c: f64) -> Result<Tilt> {
        let c = log_c.exp();
        Tilt::from_factors(self.params, share * c, 0.5 * (1.0 - share) * c)
    }

    fn emission(&mut self, share: f64, log_c: f64) -> Result<f64> {
        self.evaluations += 1;
        let tilt = self.tilt_for(share, log_c)?;
        let m = march(self.params, &tilt, self.x1_0, self.grid)?;
        Ok(tilt.emission_factor() * m.kernel.last().unwrap())
    }

    /// Tilt with the given share whose emission matches the target.
    fn match_emission(&mut self, share: f64) -> Result<Tilt> {
        let start = (self.params.mu + 2.0 * self.params.nu).ln();
        let (mut lo, mut hi) = (start, start);
        let mut step = 1.0;
        let mut b_lo = self.emission(share, lo)?;
        let mut expansions = 0;
        while b_lo > self.target {
            hi = lo;
            lo -= step;
            step *= 2.0;
            b_lo = self.emission(share, lo)?;
            expansions += 1;
            if expansions > 60 {
                return Err(Error::Numeric(format!(
                    "emission stays above target {} at share {share} down to ln c = {lo} (B = {b_lo})",
                    self.target
                )));
            }
        }
        if hi == lo {
            let mut b_hi = b_lo;
            step = 1.0;
            while b_hi < self.target {
                lo = hi;
                hi += step;
                step *= 2.0;
                b_hi = self.emission(share, hi)?;
                expansions += 1;
                if expansions > 60 || !b_hi.is_finite() {
                    return Err(Error::Numeric(format!(
                        "could not bracket emission target {} at share {share}: B({hi}) = {b_hi}",
                        self.target
                    )));
                }
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let b = self.emission(share, mid)?;
            if (b - self.target).abs() <= self.rel_tol * self.target {
                return self.tilt_for(share, mid);
            }
            if b < self.target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.tilt_for(share, 0.5 * (lo + hi))
    }

    fn rate_at(&mut self, share: f64) -> Result<(f64, Tilt)> {
        let tilt = self.match_emission(share)?;
        let b = build_bundle(self.params, &tilt, self.x1_0, self.grid)?;
        Ok((b.rate, tilt))
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Finds the tilt minimizing the rate subject to `x2(T) + x3(T) = b_target`.
pub fn solve_tilt_for_target(
    params: &RateParams,
    x1_0: f64,
    b_target: f64,
    options: &SearchOptions,
) -> Result<TiltSolution> {
    params.validate()?;
    if params.lambda <= 0.0 {
        return Err(Error::InvalidParams("optimal paths need lambda > 0".into()));
    }
    let grid = TimeGrid::uniform(params.horizon, options.grid_points)?;
    let fluid = fluid_emission(params, x1_0, &grid)?;
    if !b_target.is_finite() || b_target <= 0.0 || b_target < fluid * (1.0 - 1e-6) {
        return Err(Error::Infeasible(format!(
            "target emission {b_target} is below the typical emission {fluid}"
        )));
    }

    let mut problem = Problem {
        params,
        x1_0,
        grid: &grid,
        target: b_target,
        rel_tol: options.emission_rel_tol,
        evaluations: 0,
    };

    let (share, tilt) = if params.mu == 0.0 {
        (0.0, problem.match_emission(0.0)?)
    } else if params.nu == 0.0 {
        (1.0, problem.match_emission(1.0)?)
    } else {
        let (mut a, mut b) = (0.0, 1.0 - 1e-9);
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let (mut fc, mut tc) = problem.rate_at(c)?;
        let (mut fd, mut td) = problem.rate_at(d)?;
        while b - a > options.share_tol {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                td = tc;
                c = b - INV_PHI * (b - a);
                (fc, tc) = problem.rate_at(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                tc = td;
                d = a + INV_PHI * (b - a);
                (fd, td) = problem.rate_at(d)?;
            }
        }
        if fc <= fd {
            (c, tc)
        } else {
            (d, td)
        }
    };

    let bundle = build_bundle(params, &tilt, x1_0, &grid)?;
    let coarse = build_bundle(params, &tilt, x1_0, &grid.coarsened())?;
    let richardson = if bundle.rate == 0.0 {
        (coarse.rate - bundle.rate).abs()
    } else {
        (coarse.rate - bundle.rate).abs() / bundle.rate.abs()
    };
    if richardson > options.richardson_tol {
        warn!(
            "rate moved by {richardson:.3e} (relative) on the half grid; consider more grid points"
        );
    }
    Ok(TiltSolution {
        bundle,
        spont_share: share,
        richardson_rel_change: richardson,
        evaluations: problem.evaluations,
    })
}
