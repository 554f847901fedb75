//! Numeric probes of the large-emission behaviour of optimal paths.

use serde::Serialize;

use super::bundle::OptimalPathBundle;
use crate::error::{Error, Result};
use crate::model::RateParams;

/// `sup |x1(t) − 1/2|` over grid points in `[alpha, T − alpha]`.
pub fn chaos_gap(bundle: &OptimalPathBundle, alpha: f64) -> Result<f64> {
    let horizon = bundle.params.horizon;
    if !(alpha > 0.0 && alpha < 0.5 * horizon) {
        return Err(Error::InvalidParams(format!(
            "alpha must lie in (0, T/2) = (0, {}), got {alpha}",
            0.5 * horizon
        )));
    }
    let window = bundle
        .grid
        .times()
        .iter()
        .zip(&bundle.x1)
        .filter(|(&t, _)| t >= alpha && t <= horizon - alpha)
        .map(|(_, &x)| (x - 0.5).abs());
    let mut any = false;
    let gap = window.inspect(|_| any = true).fold(0.0, f64::max);
    if !any {
        return Err(Error::InvalidGrid(format!("no grid point inside [{alpha}, {}]", horizon - alpha)));
    }
    Ok(gap)
}

/// Spontaneous over stimulated emission at the horizon.
///
/// `+∞` when only spontaneous photons are emitted, `NaN` when nothing is.
pub fn balance_ratio(bundle: &OptimalPathBundle) -> f64 {
    let x2 = *bundle.x2.last().unwrap();
    let x3 = *bundle.x3.last().unwrap();
    if bundle.params.mu == 0.0 {
        0.0
    } else if x3 == 0.0 {
        if x2 > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    } else {
        x2 / x3
    }
}

/// Emission factors normalized by `B²`: `α = μe^{κ2}/B²`, `β = 2νe^{2κ3}/B²`.
pub fn emission_shares(bundle: &OptimalPathBundle) -> (f64, f64) {
    let b2 = bundle.emission * bundle.emission;
    (
        bundle.tilt.spont_factor / b2,
        2.0 * bundle.tilt.stim_factor / b2,
    )
}

/// `√(α + β/2) / (α + β)`, which should approach `√λ T x̃1` for large `B`.
pub fn share_balance(alpha: f64, beta: f64) -> f64 {
    (alpha + 0.5 * beta).sqrt() / (alpha + beta)
}

/// Residual of the limiting constraint `α + β/2 = λT²x̃1²(α + β)²`.
pub fn share_constraint_residual(
    alpha: f64,
    beta: f64,
    params: &RateParams,
    horizon: f64,
    x1_bar: f64,
) -> f64 {
    let c = params.lambda * horizon * horizon * x1_bar * x1_bar;
    alpha + 0.5 * beta - c * (alpha + beta) * (alpha + beta)
}

/// Limit functional `J(α, β) = (√λ T + 4√λ T x̃1) √(α + β/2)` on the
/// constraint curve.
pub fn asymptotic_j(
    alpha: f64,
    beta: f64,
    params: &RateParams,
    horizon: f64,
    x1_bar: f64,
) -> Result<f64> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::InvalidParams("shares must be non-negative".into()));
    }
    let residual = share_constraint_residual(alpha, beta, params, horizon, x1_bar);
    if residual.abs() > 1e-8 * (1.0 + alpha + 0.5 * beta) {
        return Err(Error::InvalidParams(format!(
            "(alpha, beta) = ({alpha}, {beta}) is off the constraint curve (residual {residual:e})"
        )));
    }
    let s = params.lambda.sqrt() * horizon;
    Ok((s + 4.0 * s * x1_bar) * (alpha + 0.5 * beta).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticMinimizer {
    pub alpha: f64,
    pub beta: f64,
    pub value: f64,
}

/// Minimizer `(0, β̂)` with `β̂ = 1 / (2λT²x̃1²)` and value `2 + 1/(2x̃1)`.
pub fn asymptotic_minimizer(params: &RateParams, horizon: f64, x1_bar: f64) -> AsymptoticMinimizer {
    let beta = 1.0 / (2.0 * params.lambda * horizon * horizon * x1_bar * x1_bar);
    AsymptoticMinimizer {
        alpha: 0.0,
        beta,
        value: 2.0 + 1.0 / (2.0 * x1_bar),
    }
}
