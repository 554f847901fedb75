//! Model constants, integer and scaled states, jump rates, and the
//! deterministic fluid limit of the scaled process.
//!
//! Three channels move the counting process `(M1, M2, M3)`:
//!
//! | channel | rate          | jump        |
//! |---------|---------------|-------------|
//! | excite  | `λ (N − M1)`  | `(+1, 0, 0)`|
//! | spont   | `μ M1`        | `(−1, +1, 0)`|
//! | stim    | `ν M1`        | `(−1, 0, +2)`|

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model constants and the time horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub horizon: f64,
}

impl RateParams {
    pub fn new(lambda: f64, mu: f64, nu: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            lambda,
            mu,
            nu,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("nu", self.nu),
            ("horizon", self.horizon),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite, got {v}")));
            }
            if v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidParams("horizon must be positive".into()));
        }
        if self.lambda + self.mu + self.nu <= 0.0 {
            return Err(Error::InvalidParams("lambda + mu + nu must be positive".into()));
        }
        Ok(())
    }

    /// Total de-excitation rate `μ + ν`.
    pub fn mu_tilde(&self) -> f64 {
        self.mu + self.nu
    }

    pub fn total_rate(&self) -> f64 {
        self.lambda + self.mu + self.nu
    }

    /// Fixed point of the excited fraction, `λ / (λ + μ + ν)`.
    pub fn x1_star(&self) -> f64 {
        self.lambda / self.total_rate()
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Excite,
    Spont,
    Stim,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Excite, Channel::Spont, Channel::Stim];

    /// Jump vector on `(M1, M2, M3)`.
    pub fn jump(self) -> [i64; 3] {
        match self {
            Channel::Excite => [1, 0, 0],
            Channel::Spont => [-1, 1, 0],
            Channel::Stim => [-1, 0, 2],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Excite => "EXCITE",
            Channel::Spont => "SPONT",
            Channel::Stim => "STIM",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integer counts of excited atoms, spontaneous photons and stimulated photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MicroState {
    pub m1: u64,
    pub m2: u64,
    pub m3: u64,
    pub n: u64,
}

impl MicroState {
    pub fn new(m1: u64, m2: u64, m3: u64, n: u64) -> Result<Self> {
        let s = Self { m1, m2, m3, n };
        s.validate()?;
        Ok(s)
    }

    /// `m1` excited atoms out of `n`, nothing emitted yet.
    pub fn initial(m1: u64, n: u64) -> Result<Self> {
        Self::new(m1, 0, 0, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidState("atom count must be at least 1".into()));
        }
        if self.m1 > self.n {
            return Err(Error::InvalidState(format!(
                "m1 = {} exceeds atom count {}",
                self.m1, self.n
            )));
        }
        if !self.m3.is_multiple_of(2) {
            return Err(Error::InvalidState(format!("m3 = {} must be even", self.m3)));
        }
        Ok(())
    }

    pub fn emission(&self) -> u64 {
        self.m2 + self.m3
    }

    /// Applies a channel jump. Returns `None` if the jump would leave the
    /// state space (no excited atom to de-excite, or all atoms excited).
    pub fn apply(&self, channel: Channel) -> Option<Self> {
        let mut next = *self;
        match channel {
            Channel::Excite => {
                if self.m1 >= self.n {
                    return None;
                }
                next.m1 += 1;
            }
            Channel::Spont => {
                next.m1 = self.m1.checked_sub(1)?;
                next.m2 += 1;
            }
            Channel::Stim => {
                next.m1 = self.m1.checked_sub(1)?;
                next.m3 += 2;
            }
        }
        Some(next)
    }

    pub fn scaled(&self) -> ScaledState {
        let n = self.n as f64;
        ScaledState {
            x1: self.m1 as f64 / n,
            x2: self.m2 as f64 / n,
            x3: self.m3 as f64 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl ScaledState {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Result<Self> {
        let s = Self { x1, x2, x3 };
        s.validate()?;
        Ok(s)
    }

    pub fn excited(x1: f64) -> Result<Self> {
        Self::new(x1, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()) {
            return Err(Error::InvalidState("scaled state must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.x1) {
            return Err(Error::InvalidState(format!("x1 = {} outside [0, 1]", self.x1)));
        }
        if self.x2 < 0.0 || self.x3 < 0.0 {
            return Err(Error::InvalidState("emissions must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-channel jump intensities at a given state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    pub up: f64,
    pub spont: f64,
    pub stim: f64,
}

impl ChannelRates {
    pub fn total(&self) -> f64 {
        self.up + self.spont + self.stim
    }

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Excite => self.up,
            Channel::Spont => self.spont,
            Channel::Stim => self.stim,
        }
    }
}

/// Rates `(λ(N − M1), μ M1, ν M1)` of the three channels.
pub fn transition_rates(params: &RateParams, s: &MicroState) -> ChannelRates {
    let m1 = s.m1 as f64;
    ChannelRates {
        up: params.lambda * (s.n - s.m1) as f64,
        spont: params.mu * m1,
        stim: params.nu * m1,
    }
}

/// Rates per atom at excited fraction `x1`.
pub fn scaled_rates(params: &RateParams, x1: f64) -> ChannelRates {
    ChannelRates {
        up: params.lambda * (1.0 - x1),
        spont: params.mu * x1,
        stim: params.nu * x1,
    }
}

/// Fluid velocity `(λ(1−x1) − (μ+ν)x1, μ x1, 2ν x1)`.
pub fn fluid_rhs(params: &RateParams, x: &ScaledState) -> [f64; 3] {
    let x1 = x.x1;
    [
        params.lambda * (1.0 - x1) - params.mu_tilde() * x1,
        params.mu * x1,
        2.0 * params.nu * x1,
    ]
}

/// Closed-form excited fraction of the fluid limit,
/// `x1* + (x1(0) − x1*) e^{−(λ+μ+ν) t}`.
pub fn fluid_x1_exact(params: &RateParams, x1_0: f64, t: f64) -> f64 {
    let x_star = params.x1_star();
    x_star + (x1_0 - x_star) * (-params.total_rate() * t).exp()
}

/// Strictly increasing times starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("grid must start at 0, got {}", times[0])));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("grid times must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
        }
        Ok(Self(times))
    }

    /// `points` equally spaced times covering `[0, horizon]`.
    pub fn uniform(horizon: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidGrid("uniform grid needs at least 2 points".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!("invalid horizon {horizon}")));
        }
        let last = (points - 1) as f64;
        let mut times: Vec<f64> = (0..points).map(|i| horizon * i as f64 / last).collect();
        times[points - 1] = horizon;
        Ok(Self(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Every other point, keeping the final time. Used for step-halving checks.
    pub fn coarsened(&self) -> Self {
        let mut times: Vec<f64> = self.0.iter().copied().step_by(2).collect();
        if *times.last().unwrap() != self.last() {
            times.push(self.last());
        }
        Self(times)
    }
}

/// Fluid-limit path sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidPath {
    pub grid: TimeGrid,
    pub states: Vec<ScaledState>,
}

impl FluidPath {
    pub fn x1(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.x1).collect()
    }
}

/// Integrates the fluid ODE with classical RK4, sub-stepping every grid
/// interval so that no internal step exceeds `1e-3 / (λ+μ+ν)`.
pub fn fluid_solve(params: &RateParams, x0: &ScaledState, grid: &TimeGrid) -> Result<FluidPath> {
    params.validate()?;
    x0.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if grid.last() > params.horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidGrid(format!(
            "grid ends at {} beyond horizon {}",
            grid.last(),
            params.horizon
        )));
    }
    let max_step = 1e-3 / params.total_rate();
    let rhs = |x: [f64; 3]| {
        fluid_rhs(
            params,
            &ScaledState {
                x1: x[0],
                x2: x[1],
                x3: x[2],
            },
        )
    };

    let times = grid.times();
    let mut states = Vec::with_capacity(times.len());
    let mut x = [x0.x1, x0.x2, x0.x3];
    states.push(*x0);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let substeps = (span / max_step).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for _ in 0..substeps {
            let k1 = rhs(x);
            let k2 = rhs(axpy(&x, 0.5 * h, &k1));
            let k3 = rhs(axpy(&x, 0.5 * h, &k2));
            let k4 = rhs(axpy(&x, h, &k3));
            for i in 0..3 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        states.push(ScaledState {
            x1: x[0],
            x2: x[1],
            x3: x[2],
        });
    }
    Ok(FluidPath {
        grid: grid.clone(),
        states,
    })
}

fn axpy(x: &[f64; 3], a: f64, y: &[f64; 3]) -> [f64; 3] {
    [x[0] + a * y[0], x[1] + a * y[1], x[2] + a * y[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> RateParams {
        RateParams::new(1.0, 1.0, 1.0, 3.0).unwrap()
    }

    #[test]
    fn rates_at_empty_and_full_population() {
        let p = unit();
        let r = transition_rates(&p, &MicroState::initial(0, 10).unwrap());
        assert_eq!((r.up, r.spont, r.stim), (10.0, 0.0, 0.0));
        let r = transition_rates(&p, &MicroState::initial(10, 10).unwrap());
        assert_eq!((r.up, r.spont, r.stim), (0.0, 10.0, 10.0));
    }

    #[test]
    fn rates_by_substitution() {
        let p = RateParams::new(2.0, 1.0, 3.0, 1.0).unwrap();
        let r = transition_rates(&p, &MicroState::initial(1, 4).unwrap());
        assert_eq!((r.up, r.spont, r.stim), (6.0, 1.0, 3.0));
    }

    #[test]
    fn rate_up_vanishes_only_when_saturated_or_lambda_zero() {
        let p = RateParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let r = transition_rates(&p, &MicroState::initial(0, 5).unwrap());
        assert_eq!(r.total(), 0.0);
        let p = unit();
        for m1 in 0..5 {
            assert!(transition_rates(&p, &MicroState::initial(m1, 5).unwrap()).up > 0.0);
        }
    }

    #[test]
    fn invalid_params_and_states_rejected() {
        assert!(RateParams::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(RateParams::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(RateParams::new(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(RateParams::new(1.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(MicroState::new(11, 0, 0, 10).is_err());
        assert!(MicroState::new(1, 0, 3, 10).is_err());
        assert!(MicroState::new(0, 0, 0, 0).is_err());
        assert!(ScaledState::new(1.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn jumps_respect_boundaries() {
        let s = MicroState::initial(0, 2).unwrap();
        assert!(s.apply(Channel::Spont).is_none());
        let s = s.apply(Channel::Excite).unwrap().apply(Channel::Excite).unwrap();
        assert!(s.apply(Channel::Excite).is_none());
        let s = s.apply(Channel::Stim).unwrap();
        assert_eq!((s.m1, s.m2, s.m3), (1, 0, 2));
    }

    #[test]
    fn fluid_rhs_examples() {
        let p = unit();
        let v = fluid_rhs(&p, &ScaledState::excited(1.0 / 3.0).unwrap());
        assert!(v[0].abs() < 1e-15);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[2] - 2.0 / 3.0).abs() < 1e-15);

        let p = RateParams::new(0.7, 0.2, 1.3, 1.0).unwrap();
        assert_eq!(fluid_rhs(&p, &ScaledState::excited(0.0).unwrap()), [0.7, 0.0, 0.0]);

        let p = RateParams::new(1.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(fluid_rhs(&p, &ScaledState::excited(1.0).unwrap()), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn fluid_rhs_vanishes_at_fixed_point() {
        for (l, m, n) in [(1.0, 2.0, 3.0), (0.5, 0.0, 4.0), (2.0, 2.0, 0.0)] {
            let p = RateParams::new(l, m, n, 1.0).unwrap();
            let v = fluid_rhs(&p, &ScaledState::excited(p.x1_star()).unwrap());
            assert!(v[0].abs() < 1e-15, "{v:?}");
        }
    }

    #[test]
    fn stationary_start_gives_linear_emissions() {
        let p = unit();
        let grid = TimeGrid::uniform(3.0, 31).unwrap();
        let path = fluid_solve(&p, &ScaledState::excited(1.0 / 3.0).unwrap(), &grid).unwrap();
        for (t, s) in grid.times().iter().zip(&path.states) {
            assert!((s.x1 - 1.0 / 3.0).abs() < 1e-12);
            assert!((s.x2 - t / 3.0).abs() < 1e-10);
            assert!((s.x3 - 2.0 * t / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ground_start_matches_closed_form() {
        let p = unit();
        let grid = TimeGrid::uniform(3.0, 64).unwrap();
        let path = fluid_solve(&p, &ScaledState::excited(0.0).unwrap(), &grid).unwrap();
        for (t, s) in grid.times().iter().zip(&path.states) {
            let exact = (1.0 - (-3.0 * t).exp()) / 3.0;
            assert!((s.x1 - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn pure_decay() {
        let p = RateParams::new(0.0, 1.0, 0.0, 2.0).unwrap();
        let grid = TimeGrid::uniform(2.0, 21).unwrap();
        let path = fluid_solve(&p, &ScaledState::excited(1.0).unwrap(), &grid).unwrap();
        for (t, s) in grid.times().iter().zip(&path.states) {
            assert!((s.x1 - (-t).exp()).abs() < 1e-8);
            assert!((s.x2 - (1.0 - (-t).exp())).abs() < 1e-8);
            assert_eq!(s.x3, 0.0);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.2]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.2, 0.2]).is_err());
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        assert_eq!(g.coarsened().times(), &[0.0, 0.5, 1.0]);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.coarsened().len(), 3);
        assert_eq!(g.coarsened().last(), 1.0);
    }
}
