//! Exact simulation of the counting process and its exponentially tilted
//! variant.
//!
//! # Random streams
//!
//! Every run draws from ChaCha8 seeded with the user seed (via
//! `seed_from_u64`) on stream number `run_index`, so runs are independent,
//! reproducible, and can be scheduled on any thread. Exponential holding
//! times use inversion, `−ln(1 − U) / R`, with `U` the 53-bit uniform of
//! `rand`.
//!
//! # Tilted runs
//!
//! Under a tilt `(κ1(·), κ2, κ3)` the channel intensities become
//! `λ(N−M1)e^{κ1(t)}`, `μM1e^{−κ1(t)+κ2}` and `νM1e^{−κ1(t)+2κ3}`. The
//! time-inhomogeneous chain is simulated by thinning against an envelope
//! taken at the endpoints of `[t, T]` (valid because `κ1` is monotone), and
//! each run carries the log likelihood ratio of the original law against the
//! tilted one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{transition_rates, Channel, MicroState, RateParams, ScaledState, TimeGrid};
use crate::optimal_path::Tilt;

/// Random stream for run `run_index` under `seed`.
pub fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

fn exp_draw<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub channel: Channel,
    pub state_after: MicroState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: MicroState,
    pub events: Vec<EventRecord>,
    pub horizon: f64,
    /// Log likelihood ratio against the untilted law; zero for exact runs.
    pub log_weight: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> MicroState {
        self.events.last().map_or(self.initial, |e| e.state_after)
    }

    /// State in force at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> MicroState {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            self.initial
        } else {
            self.events[idx - 1].state_after
        }
    }

    /// CSV with header `time,channel,m1,m2,m3`. The first row is the initial
    /// state, tagged `INIT`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,channel,m1,m2,m3\n");
        let s = self.initial;
        let _ = writeln!(out, "{:.16e},INIT,{},{},{}", 0.0, s.m1, s.m2, s.m3);
        for e in &self.events {
            let s = e.state_after;
            let _ = writeln!(out, "{:.16e},{},{},{},{}", e.time, e.channel, s.m1, s.m2, s.m3);
        }
        out
    }
}

fn pick_channel(u: f64, up: f64, spont: f64) -> Channel {
    if u < up {
        Channel::Excite
    } else if u < up + spont {
        Channel::Spont
    } else {
        Channel::Stim
    }
}

/// Direct-method simulation; `on_event` sees every event in order.
fn simulate<R: Rng>(
    params: &RateParams,
    init: MicroState,
    rng: &mut R,
    mut on_event: impl FnMut(f64, Channel, MicroState),
) -> MicroState {
    let mut state = init;
    let mut t = 0.0;
    loop {
        let rates = transition_rates(params, &state);
        let total = rates.total();
        if total <= 0.0 {
            break;
        }
        t += exp_draw(rng, total);
        if t > params.horizon {
            break;
        }
        let u = rng.random::<f64>() * total;
        let mut channel = pick_channel(u, rates.up, rates.spont);
        // Guard against u landing on a zero-rate channel through roundoff.
        if rates.get(channel) == 0.0 {
            channel = *Channel::ALL
                .iter()
                .rev()
                .find(|c| rates.get(**c) > 0.0)
                .expect("positive total rate");
        }
        state = state.apply(channel).expect("channel with positive rate");
        on_event(t, channel, state);
    }
    state
}

pub fn ssa_run_with<R: Rng>(params: &RateParams, init: &MicroState, rng: &mut R) -> Result<Trajectory> {
    params.validate()?;
    init.validate()?;
    let mut events = Vec::new();
    simulate(params, *init, rng, |time, channel, state_after| {
        events.push(EventRecord {
            time,
            channel,
            state_after,
        })
    });
    Ok(Trajectory {
        initial: *init,
        events,
        horizon: params.horizon,
        log_weight: 0.0,
    })
}

/// One exact trajectory on `[0, T]` using stream 0 of `seed`.
pub fn ssa_run(params: &RateParams, init: &MicroState, seed: u64) -> Result<Trajectory> {
    ssa_run_with(params, init, &mut run_rng(seed, 0))
}

/// Ensemble statistics of the scaled state on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub params: RateParams,
    pub initial: MicroState,
    pub seed: u64,
    pub n_runs: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<ScaledState>,
    pub variance: Vec<ScaledState>,
    /// Terminal emission `M2 + M3` → number of runs.
    pub emission_histogram: BTreeMap<u64, u64>,
}

impl BatchSummary {
    pub fn mean_x1(&self) -> Vec<f64> {
        self.mean.iter().map(|s| s.x1).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Grid samples of one run. Run `i` uses stream `i` of `seed`.
pub fn sample_run(
    params: &RateParams,
    init: &MicroState,
    seed: u64,
    run_index: u64,
    grid: &TimeGrid,
) -> (Vec<ScaledState>, MicroState) {
    let times = grid.times();
    let mut samples = Vec::with_capacity(times.len());
    let mut current = *init;
    let mut rng = run_rng(seed, run_index);
    let last = simulate(params, *init, &mut rng, |t, _, after| {
        while samples.len() < times.len() && times[samples.len()] < t {
            samples.push(current.scaled());
        }
        current = after;
    });
    while samples.len() < times.len() {
        samples.push(last.scaled());
    }
    (samples, last)
}

/// Runs `n_runs` independent trajectories in parallel and reduces them in
/// run order, so the result does not depend on thread scheduling.
pub fn ssa_batch(
    params: &RateParams,
    init: &MicroState,
    n_runs: usize,
    seed: u64,
    grid: &TimeGrid,
) -> Result<BatchSummary> {
    params.validate()?;
    init.validate()?;
    if n_runs == 0 {
        return Err(Error::InvalidParams("n_runs must be at least 1".into()));
    }
    let runs: Vec<(Vec<ScaledState>, MicroState)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| sample_run(params, init, seed, i, grid))
        .collect();

    let n_pts = grid.len();
    let mut sum = vec![[0.0f64; 3]; n_pts];
    let mut histogram = BTreeMap::new();
    for (samples, last) in &runs {
        for (acc, s) in sum.iter_mut().zip(samples) {
            acc[0] += s.x1;
            acc[1] += s.x2;
            acc[2] += s.x3;
        }
        *histogram.entry(last.emission()).or_insert(0) += 1;
    }
    let n = n_runs as f64;
    let mean: Vec<[f64; 3]> = sum.iter().map(|a| [a[0] / n, a[1] / n, a[2] / n]).collect();
    let mut sq = vec![[0.0f64; 3]; n_pts];
    for (samples, _) in &runs {
        for ((acc, s), m) in sq.iter_mut().zip(samples).zip(&mean) {
            acc[0] += (s.x1 - m[0]).powi(2);
            acc[1] += (s.x2 - m[1]).powi(2);
            acc[2] += (s.x3 - m[2]).powi(2);
        }
    }
    let denom = if n_runs > 1 { n - 1.0 } else { 1.0 };
    let to_state = |a: &[f64; 3]| ScaledState {
        x1: a[0],
        x2: a[1],
        x3: a[2],
    };
    Ok(BatchSummary {
        params: *params,
        initial: *init,
        seed,
        n_runs,
        grid: grid.times().to_vec(),
        mean: mean.iter().map(to_state).collect(),
        variance: sq
            .iter()
            .map(|a| to_state(&[a[0] / denom, a[1] / denom, a[2] / denom]))
            .collect(),
        emission_histogram: histogram,
    })
}

/// Exponential tilt of the channel intensities with a time-dependent
/// excitation conjugate.
pub trait TiltSchedule: Sync {
    fn kappa1(&self, t: f64) -> f64;
    fn kappa2(&self) -> f64;
    fn kappa3(&self) -> f64;
    /// `μ e^{κ2}`.
    fn spont_factor(&self) -> f64;
    /// `ν e^{2κ3}`.
    fn stim_factor(&self) -> f64;
    fn integral_exp_kappa1(&self, t0: f64, t1: f64) -> f64;
    fn integral_exp_neg_kappa1(&self, t0: f64, t1: f64) -> f64;
    /// Upper bounds of `e^{κ1}` and `e^{−κ1}` on `[t0, t1]`.
    fn envelope(&self, t0: f64, t1: f64) -> (f64, f64);
}

/// Tilt with constant `κ1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantTilt {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    mu: f64,
    nu: f64,
}

impl ConstantTilt {
    pub fn new(params: &RateParams, kappa1: f64, kappa2: f64, kappa3: f64) -> Self {
        Self {
            kappa1,
            kappa2,
            kappa3,
            mu: params.mu,
            nu: params.nu,
        }
    }
}

impl TiltSchedule for ConstantTilt {
    fn kappa1(&self, _t: f64) -> f64 {
        self.kappa1
    }
    fn kappa2(&self) -> f64 {
        self.kappa2
    }
    fn kappa3(&self) -> f64 {
        self.kappa3
    }
    fn spont_factor(&self) -> f64 {
        self.mu * self.kappa2.exp()
    }
    fn stim_factor(&self) -> f64 {
        self.nu * (2.0 * self.kappa3).exp()
    }
    fn integral_exp_kappa1(&self, t0: f64, t1: f64) -> f64 {
        self.kappa1.exp() * (t1 - t0)
    }
    fn integral_exp_neg_kappa1(&self, t0: f64, t1: f64) -> f64 {
        (-self.kappa1).exp() * (t1 - t0)
    }
    fn envelope(&self, _t0: f64, _t1: f64) -> (f64, f64) {
        (self.kappa1.exp(), (-self.kappa1).exp())
    }
}

impl TiltSchedule for Tilt {
    fn kappa1(&self, t: f64) -> f64 {
        Tilt::kappa1(self, t)
    }
    fn kappa2(&self) -> f64 {
        self.kappa2
    }
    fn kappa3(&self) -> f64 {
        self.kappa3
    }
    fn spont_factor(&self) -> f64 {
        self.spont_factor
    }
    fn stim_factor(&self) -> f64 {
        self.stim_factor
    }
    fn integral_exp_kappa1(&self, t0: f64, t1: f64) -> f64 {
        Tilt::integral_exp_kappa1(self, t0, t1)
    }
    fn integral_exp_neg_kappa1(&self, t0: f64, t1: f64) -> f64 {
        Tilt::integral_exp_neg_kappa1(self, t0, t1)
    }
    fn envelope(&self, t0: f64, t1: f64) -> (f64, f64) {
        let (y0, y1) = (self.exp_kappa1(t0), self.exp_kappa1(t1));
        (y0.max(y1), (1.0 / y0).max(1.0 / y1))
    }
}

/// `∫ (tilted total rate − original total rate)` over `[t0, t1]` at fixed state.
fn compensator<S: TiltSchedule + ?Sized>(
    params: &RateParams,
    schedule: &S,
    state: &MicroState,
    t0: f64,
    t1: f64,
) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let ground = (state.n - state.m1) as f64;
    let excited = state.m1 as f64;
    let dt = t1 - t0;
    let mut acc = 0.0;
    if ground > 0.0 {
        acc += params.lambda * ground * (schedule.integral_exp_kappa1(t0, t1) - dt);
    }
    if excited > 0.0 {
        let factor = schedule.spont_factor() + schedule.stim_factor();
        if factor > 0.0 {
            acc += excited * factor * schedule.integral_exp_neg_kappa1(t0, t1);
        }
        acc -= excited * params.mu_tilde() * dt;
    }
    acc
}

fn tilt_exponent<S: TiltSchedule + ?Sized>(schedule: &S, channel: Channel, kappa1: f64) -> f64 {
    match channel {
        Channel::Excite => kappa1,
        Channel::Spont => -kappa1 + schedule.kappa2(),
        Channel::Stim => -kappa1 + 2.0 * schedule.kappa3(),
    }
}

pub fn tilted_run_with<S: TiltSchedule + ?Sized, R: Rng>(
    params: &RateParams,
    init: &MicroState,
    schedule: &S,
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    init.validate()?;
    let horizon = params.horizon;
    let spont_f = schedule.spont_factor();
    let stim_f = schedule.stim_factor();
    let mut state = *init;
    let mut events = Vec::new();
    let mut log_weight = 0.0;
    let mut t = 0.0;
    let mut last_event = 0.0;
    loop {
        let ground = (state.n - state.m1) as f64;
        let excited = state.m1 as f64;
        let (env_pos, env_neg) = schedule.envelope(t, horizon);
        let bound = params.lambda * ground * env_pos + excited * (spont_f + stim_f) * env_neg;
        if !bound.is_finite() {
            return Err(Error::Numeric(format!("non-finite rate envelope at t = {t}")));
        }
        if bound <= 0.0 {
            break;
        }
        t += exp_draw(rng, bound);
        if t >= horizon {
            break;
        }
        let k1 = schedule.kappa1(t);
        if !k1.is_finite() {
            return Err(Error::Numeric(format!("kappa1({t}) = {k1}")));
        }
        let y = k1.exp();
        let up = params.lambda * ground * y;
        let spont = excited * spont_f / y;
        let stim = excited * stim_f / y;
        let u = rng.random::<f64>() * bound;
        if u >= up + spont + stim {
            continue;
        }
        let channel = pick_channel(u, up, spont);
        log_weight += compensator(params, schedule, &state, last_event, t)
            - tilt_exponent(schedule, channel, k1);
        state = state.apply(channel).ok_or_else(|| {
            Error::Numeric(format!("tilted chain left the state space at t = {t}"))
        })?;
        events.push(EventRecord {
            time: t,
            channel,
            state_after: state,
        });
        last_event = t;
    }
    log_weight += compensator(params, schedule, &state, last_event, horizon);
    if !log_weight.is_finite() {
        return Err(Error::Numeric("non-finite log weight".into()));
    }
    Ok(Trajectory {
        initial: *init,
        events,
        horizon,
        log_weight,
    })
}

/// One tilted trajectory using stream 0 of `seed`.
pub fn tilted_run<S: TiltSchedule + ?Sized>(
    params: &RateParams,
    init: &MicroState,
    schedule: &S,
    seed: u64,
) -> Result<Trajectory> {
    tilted_run_with(params, init, schedule, &mut run_rng(seed, 0))
}

/// Monte Carlo estimate of `P(M2(T) + M3(T) ≥ threshold)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample variance of the per-run estimator.
    pub variance: f64,
    pub std_error: f64,
    pub n_runs: usize,
    /// Runs that reached the threshold.
    pub hits: usize,
}

impl Estimate {
    fn from_samples(samples: &[f64], hits: usize) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            std_error: (variance / n).sqrt(),
            n_runs: samples.len(),
            hits,
        }
    }
}

/// Plain Monte Carlo estimate with exact simulation.
pub fn emission_tail_mc(
    params: &RateParams,
    init: &MicroState,
    threshold: u64,
    n_runs: usize,
    seed: u64,
) -> Result<Estimate> {
    params.validate()?;
    init.validate()?;
    if n_runs == 0 {
        return Err(Error::InvalidParams("n_runs must be at least 1".into()));
    }
    let samples: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let last = simulate(params, *init, &mut run_rng(seed, i), |_, _, _| {});
            if last.emission() >= threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let hits = samples.iter().filter(|&&s| s > 0.0).count();
    Ok(Estimate::from_samples(&samples, hits))
}

/// Importance-sampling estimate `mean(exp(log_weight) · 1{emission ≥ threshold})`
/// under a tilt.
pub fn emission_tail_is<S: TiltSchedule + ?Sized>(
    params: &RateParams,
    init: &MicroState,
    schedule: &S,
    threshold: u64,
    n_runs: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_runs == 0 {
        return Err(Error::InvalidParams("n_runs must be at least 1".into()));
    }
    let samples: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let tr = tilted_run_with(params, init, schedule, &mut run_rng(seed, i))?;
            Ok(if tr.final_state().emission() >= threshold {
                tr.log_weight.exp()
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    let hits = samples.iter().filter(|&&s| s > 0.0).count();
    Ok(Estimate::from_samples(&samples, hits))
}
