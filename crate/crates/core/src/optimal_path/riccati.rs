//! Conserved tilt and the closed-form conjugate momentum `κ1(t)`.
//!
//! With `y = e^{κ1}` the momentum equation is the Riccati equation
//! `ẏ = λ (y² − a y − b)`, whose roots `r1 ≤ 0 ≤ r2` give
//!
//! ```text
//! y(t) = (r2 + r1 q(t)) / (1 + q(t)),   q(t) = ζ1 e^{λ (r2 − r1)(t − T)},
//! ζ1 = (r2 − 1) / (1 − r1),
//! ```
//!
//! which satisfies `y(T) = 1`. Only `t − T ≤ 0` ever appears in an exponent,
//! so nothing overflows even when `b` is of order `10¹⁶`. The classical
//! constant `C1 = −ζ1 e^{−λT(r2−r1)}` is kept for reference only; it
//! underflows for large tilts and is never used in evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RateParams;

/// Conserved conjugates `κ2`, `κ3` with the Riccati data they induce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub kappa2: f64,
    pub kappa3: f64,
    /// `μ e^{κ2}`.
    pub spont_factor: f64,
    /// `ν e^{2κ3}`.
    pub stim_factor: f64,
    pub a: f64,
    pub b: f64,
    pub r1: f64,
    pub r2: f64,
    pub c1: f64,
    pub zeta1: f64,
    lambda: f64,
    horizon: f64,
}

/// Roots of `y² − a y − b` without cancellation, ordered `r1 ≤ r2`.
pub fn quadratic_roots(a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * a;
    let disc = (half * half + b).sqrt();
    if half >= 0.0 {
        let r2 = half + disc;
        let r1 = if r2 == 0.0 { 0.0 } else { -b / r2 };
        (r1, r2)
    } else {
        let r1 = half - disc;
        (r1, -b / r1 + 0.0)
    }
}

impl Tilt {
    pub fn new(params: &RateParams, kappa2: f64, kappa3: f64) -> Result<Self> {
        if kappa2.is_nan() || kappa3.is_nan() || kappa2 == f64::INFINITY || kappa3 == f64::INFINITY
        {
            return Err(Error::InvalidParams(format!(
                "tilt must be finite or −∞, got ({kappa2}, {kappa3})"
            )));
        }
        let spont = if params.mu == 0.0 { 0.0 } else { params.mu * kappa2.exp() };
        let stim = if params.nu == 0.0 { 0.0 } else { params.nu * (2.0 * kappa3).exp() };
        Self::build(params, kappa2, kappa3, spont, stim)
    }

    pub fn zero(params: &RateParams) -> Result<Self> {
        Self::new(params, 0.0, 0.0)
    }

    /// Tilt from the emission factors `μ e^{κ2}` and `ν e^{2κ3}` directly.
    /// A zero factor on a channel with positive rate means `κ = −∞`.
    pub fn from_factors(params: &RateParams, spont_factor: f64, stim_factor: f64) -> Result<Self> {
        if !(spont_factor >= 0.0 && stim_factor >= 0.0)
            || !spont_factor.is_finite()
            || !stim_factor.is_finite()
        {
            return Err(Error::InvalidParams(format!(
                "emission factors must be finite and non-negative, got ({spont_factor}, {stim_factor})"
            )));
        }
        if (params.mu == 0.0 && spont_factor != 0.0) || (params.nu == 0.0 && stim_factor != 0.0) {
            return Err(Error::InvalidParams(
                "a channel with zero rate cannot carry an emission factor".into(),
            ));
        }
        let kappa2 = if params.mu == 0.0 { 0.0 } else { (spont_factor / params.mu).ln() };
        let kappa3 = if params.nu == 0.0 { 0.0 } else { 0.5 * (stim_factor / params.nu).ln() };
        Self::build(params, kappa2, kappa3, spont_factor, stim_factor)
    }

    fn build(
        params: &RateParams,
        kappa2: f64,
        kappa3: f64,
        spont_factor: f64,
        stim_factor: f64,
    ) -> Result<Self> {
        params.validate()?;
        if params.lambda <= 0.0 {
            return Err(Error::InvalidParams(
                "the Riccati normalization needs lambda > 0".into(),
            ));
        }
        let lambda = params.lambda;
        let a = 1.0 - params.mu / lambda - params.nu / lambda;
        let b = (spont_factor + stim_factor) / lambda;
        if !b.is_finite() {
            return Err(Error::Numeric(format!("tilt overflow: b = {b}")));
        }
        let (r1, r2) = quadratic_roots(a, b);
        let zeta1 = (r2 - 1.0) / (1.0 - r1);
        let c1 = -zeta1 * (-lambda * params.horizon * (r2 - r1)).exp();
        Ok(Self {
            kappa2,
            kappa3,
            spont_factor,
            stim_factor,
            a,
            b,
            r1,
            r2,
            c1,
            zeta1,
            lambda,
            horizon: params.horizon,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `λ (r2 − r1)`, the exponential rate of the Riccati solution.
    pub fn spread(&self) -> f64 {
        self.lambda * (self.r2 - self.r1)
    }

    /// Total emission factor `μ e^{κ2} + 2 ν e^{2κ3}`.
    pub fn emission_factor(&self) -> f64 {
        self.spont_factor + 2.0 * self.stim_factor
    }

    fn q(&self, t: f64) -> f64 {
        self.zeta1 * (self.spread() * (t - self.horizon)).exp()
    }

    /// `e^{κ1(t)}`.
    pub fn exp_kappa1(&self, t: f64) -> f64 {
        if t >= self.horizon {
            return 1.0;
        }
        let q = self.q(t);
        (self.r2 + self.r1 * q) / (1.0 + q)
    }

    /// `κ1(t)` in log form; exactly zero at the horizon.
    pub fn kappa1(&self, t: f64) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        let q = self.q(t);
        if self.r2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.r2.ln() + (self.r1 / self.r2 * q).ln_1p() - q.ln_1p()
    }

    /// `κ̇1(t) = λ (y − r1)(y − r2) / y`, written without cancellation.
    pub fn kappa1_dot(&self, t: f64) -> f64 {
        if self.zeta1 == 0.0 {
            return 0.0;
        }
        let q = self.q(t);
        let d = self.r2 - self.r1;
        let y = (self.r2 + self.r1 * q) / (1.0 + q);
        -self.lambda * d * d * q / ((1.0 + q) * (1.0 + q) * y)
    }

    /// `∫ e^{κ1} dt` over `[t0, t1]`.
    pub fn integral_exp_kappa1(&self, t0: f64, t1: f64) -> f64 {
        let q0 = self.q(t0.min(self.horizon));
        let q1 = self.q(t1.min(self.horizon));
        self.r2 * (t1 - t0) - (q1.ln_1p() - q0.ln_1p()) / self.lambda
    }

    /// `∫ e^{−κ1} dt` over `[t0, t1]`.
    pub fn integral_exp_neg_kappa1(&self, t0: f64, t1: f64) -> f64 {
        let c = self.spont_factor + self.stim_factor;
        if c > 0.0 {
            // From the momentum equation: c e^{−κ1} = λ e^{κ1} − κ̇1 − λa.
            let lhs = self.lambda * self.integral_exp_kappa1(t0, t1)
                - (self.kappa1(t1) - self.kappa1(t0))
                - self.lambda * self.a * (t1 - t0);
            lhs / c
        } else {
            // b = 0: r1 = 0 and e^{−κ1} = (1 + q) / r2.
            let q0 = self.q(t0);
            let q1 = self.q(t1);
            ((t1 - t0) + (q1 - q0) / self.spread()) / self.r2
        }
    }
}

/// `(a, b, r1, r2)` for a tilt.
pub fn riccati_roots(params: &RateParams, tilt: &Tilt) -> Result<(f64, f64, f64, f64)> {
    if params.lambda <= 0.0 {
        return Err(Error::InvalidParams("riccati_roots needs lambda > 0".into()));
    }
    Ok((tilt.a, tilt.b, tilt.r1, tilt.r2))
}

/// `κ1(t)` at time `t ∈ [0, T]`.
pub fn kappa1_at(t: f64, tilt: &Tilt) -> Result<f64> {
    if !(0.0..=tilt.horizon()).contains(&t) {
        return Err(Error::InvalidGrid(format!(
            "t = {t} outside [0, {}]",
            tilt.horizon()
        )));
    }
    let k = tilt.kappa1(t);
    if !k.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite kappa1 at t = {t}: r1 = {}, r2 = {}, zeta1 = {}",
            tilt.r1, tilt.r2, tilt.zeta1
        )));
    }
    Ok(k)
}
