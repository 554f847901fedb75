//! Exact transient tail probabilities `P(M2(T) + M3(T) ≥ A)` for small `N`.
//!
//! The chain is reduced to `(m1, s)` with `s = m2 + m3 < A`, plus one
//! absorbing state collecting every path whose emission has reached `A`.
//! Transient probabilities come from uniformization: with `Λ` at least the
//! largest exit rate, `p(t) = Σ_k Pois(k; Λt) p(0) Pᵏ` where `P = I + Q/Λ`.
//!
//! The horizon is cut into slices with `ΛΔt ≤ 500` so that `e^{−ΛΔt}` stays
//! a normal float. In each slice the series stops at the first `K ≥ ΛΔt`
//! for which the Poisson tail bound
//! `Σ_{k>K} w_k ≤ w_{K+1} / (1 − ΛΔt/(K+2))`
//! is below both the absolute tolerance (shared across slices) and `1e−10`
//! times the absorbed mass so far, so tiny probabilities keep their relative
//! accuracy.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MicroState, RateParams};

const SLICE_MAX: f64 = 500.0;
const RELATIVE_TAIL: f64 = 1e-10;
const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactOptions {
    /// Largest admissible number of chain states.
    pub budget: usize,
    /// Bound on the total Poisson mass dropped by truncation.
    pub tail_tol: f64,
    /// In scans, start from `M1(0) ~ Binomial(N, x1_0)` instead of `⌊x1_0 N⌋`.
    pub binomial_start: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            budget: 10_000_000,
            tail_tol: 1e-12,
            binomial_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Generator of the emission-capped chain.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    pub n: u64,
    pub a_cap: u64,
    /// Off-diagonal entries, grouped by source state.
    pub transitions: Vec<Transition>,
    /// Diagonal entries (minus the exit rates).
    pub diagonal: Vec<f64>,
}

impl TruncatedChain {
    pub fn state_count(n: u64, a_cap: u64) -> usize {
        (n as usize + 1) * a_cap as usize + 1
    }

    pub fn new(params: &RateParams, n: u64, a_cap: u64, budget: usize) -> Result<Self> {
        params.validate()?;
        if n == 0 {
            return Err(Error::InvalidParams("N must be at least 1".into()));
        }
        let states = (n as u128 + 1) * a_cap as u128 + 1;
        if states > budget as u128 {
            return Err(Error::BudgetExceeded {
                states: states.min(usize::MAX as u128) as usize,
                budget,
            });
        }
        let mut chain = Self {
            n,
            a_cap,
            transitions: Vec::with_capacity(3 * states as usize),
            diagonal: vec![0.0; states as usize],
        };
        for s in 0..a_cap {
            for m1 in 0..=n {
                let from = chain.index(m1, s);
                let moves = [
                    (params.lambda * (n - m1) as f64, m1 + 1, s),
                    (params.mu * m1 as f64, m1.wrapping_sub(1), s + 1),
                    (params.nu * m1 as f64, m1.wrapping_sub(1), s + 2),
                ];
                for (rate, to_m1, to_s) in moves {
                    if !rate.is_finite() {
                        return Err(Error::InvalidParams(format!("non-finite rate {rate}")));
                    }
                    if rate > 0.0 {
                        let to = chain.index(to_m1, to_s);
                        chain.transitions.push(Transition { from, to, rate });
                        chain.diagonal[from] -= rate;
                    }
                }
            }
        }
        Ok(chain)
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn absorbing(&self) -> usize {
        self.len() - 1
    }

    /// Index of `(m1, s)`; any `s ≥ A` maps to the absorbing state.
    pub fn index(&self, m1: u64, s: u64) -> usize {
        if s >= self.a_cap {
            self.absorbing()
        } else {
            s as usize * (self.n as usize + 1) + m1 as usize
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = self.diagonal.clone();
        for t in &self.transitions {
            sums[t.from] += t.rate;
        }
        sums
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diagonal.iter().fold(0.0, |m, d| m.max(-d))
    }

    /// `out = p (I + Q/Λ)`.
    fn step(&self, p: &[f64], out: &mut [f64], inv_lambda: f64) {
        for ((o, &pi), &d) in out.iter_mut().zip(p).zip(&self.diagonal) {
            *o = pi * (1.0 + d * inv_lambda);
        }
        for t in &self.transitions {
            out[t.to] += p[t.from] * t.rate * inv_lambda;
        }
    }

    /// Distribution at `horizon` from `p0` by uniformization.
    pub fn transient(&self, p0: &[f64], horizon: f64, tail_tol: f64) -> Result<Vec<f64>> {
        if p0.len() != self.len() {
            return Err(Error::InvalidState(format!(
                "initial distribution has {} entries, chain has {}",
                p0.len(),
                self.len()
            )));
        }
        let rate = self.max_exit_rate();
        if rate == 0.0 || horizon == 0.0 {
            return Ok(p0.to_vec());
        }
        let slices = (rate * horizon / SLICE_MAX).ceil().max(1.0);
        let q = rate * horizon / slices;
        let slice_tol = tail_tol / slices;
        let inv_lambda = 1.0 / rate;
        let absorbing = self.absorbing();

        let mut p = p0.to_vec();
        let mut v = vec![0.0; self.len()];
        let mut next = vec![0.0; self.len()];
        for _ in 0..slices as usize {
            let mut acc = vec![0.0; self.len()];
            v.copy_from_slice(&p);
            let mut w = (-q).exp();
            let mut k = 0usize;
            loop {
                for (a, &x) in acc.iter_mut().zip(&v) {
                    *a += w * x;
                }
                let w_next = w * q / (k + 1) as f64;
                let kf = k as f64;
                if kf >= q {
                    let bound = w_next / (1.0 - q / (kf + 2.0));
                    let absorbed = acc[absorbing];
                    if bound <= slice_tol && (bound <= RELATIVE_TAIL * absorbed || bound < 1e-300) {
                        break;
                    }
                }
                self.step(&v, &mut next, inv_lambda);
                std::mem::swap(&mut v, &mut next);
                w = w_next;
                k += 1;
            }
            p = acc;
        }
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL || !mass.is_finite() {
            return Err(Error::Numeric(format!("probability mass {mass} at the horizon")));
        }
        Ok(p)
    }
}

fn rare_event_from(params: &RateParams, n: u64, p0_m1: &[f64], a_cap: u64, options: &ExactOptions) -> Result<f64> {
    if a_cap == 0 {
        return Ok(1.0);
    }
    let chain = TruncatedChain::new(params, n, a_cap, options.budget)?;
    let mut p0 = vec![0.0; chain.len()];
    for (m1, &w) in p0_m1.iter().enumerate() {
        p0[chain.index(m1 as u64, 0)] = w;
    }
    let p = chain.transient(&p0, params.horizon, options.tail_tol)?;
    Ok(p[chain.absorbing()].clamp(0.0, 1.0))
}

/// `P(M2(T) + M3(T) ≥ A)` from a fixed initial state.
pub fn rare_event_prob(
    params: &RateParams,
    init: &MicroState,
    a_cap: u64,
    options: &ExactOptions,
) -> Result<f64> {
    params.validate()?;
    init.validate()?;
    let done = init.emission();
    if done >= a_cap {
        return Ok(1.0);
    }
    let mut p0 = vec![0.0; init.n as usize + 1];
    p0[init.m1 as usize] = 1.0;
    rare_event_from(params, init.n, &p0, a_cap - done, options)
}

/// `P(M2(T) + M3(T) ≥ A)` with `M1(0) ~ Binomial(N, x1_0)` and no emission.
pub fn rare_event_prob_binomial(
    params: &RateParams,
    n: u64,
    x1_0: f64,
    a_cap: u64,
    options: &ExactOptions,
) -> Result<f64> {
    params.validate()?;
    if !(0.0..=1.0).contains(&x1_0) {
        return Err(Error::InvalidState(format!("x1_0 = {x1_0} outside [0, 1]")));
    }
    rare_event_from(params, n, &binomial_pmf(n, x1_0), a_cap, options)
}

fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    if p == 0.0 || p == 1.0 {
        let mut v = vec![0.0; n as usize + 1];
        v[if p == 0.0 { 0 } else { n as usize }] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_choose = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            (log_choose + k as f64 * lp + (n - k) as f64 * lq).exp()
        })
        .collect()
}

/// Deterministic initial excitation `⌊x1_0 N⌋`, guarded against roundoff
/// just below an integer.
pub fn initial_excited(x1_0: f64, n: u64) -> u64 {
    ((x1_0 * n as f64 * (1.0 + 1e-12)).floor() as u64).min(n)
}

/// Emission threshold `⌈BN⌉`, guarded against roundoff just above an integer.
pub fn emission_threshold(b: f64, n: u64) -> u64 {
    (b * n as f64 * (1.0 - 1e-12)).ceil().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdPoint {
    pub n: u64,
    pub a: u64,
    pub probability: f64,
    /// `−ln P / N`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdScan {
    pub b: f64,
    pub x1_0: f64,
    pub points: Vec<LdPoint>,
    /// Intercept of the least-squares line `slope ≈ c0 + c1/N`.
    pub extrapolated: Option<f64>,
    /// Whether the slopes after the first are monotone in `N`.
    pub monotone: bool,
}

/// Intercept of the least-squares fit `y ≈ c0 + c1 x`.
pub fn linear_intercept(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(my - sxy / sxx * mx)
}

fn is_monotone(values: &[f64]) -> bool {
    let tail = if values.len() > 1 { &values[1..] } else { values };
    let up = tail.windows(2).all(|w| w[1] >= w[0]);
    let down = tail.windows(2).all(|w| w[1] <= w[0]);
    up || down
}

/// Exact decay rates `−(1/N) ln P(M2 + M3 ≥ ⌈BN⌉)` for each `N`, solved in
/// parallel.
pub fn ld_slope(
    params: &RateParams,
    b: f64,
    n_list: &[u64],
    x1_0: f64,
    options: &ExactOptions,
) -> Result<LdScan> {
    params.validate()?;
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::InvalidParams(format!("B must be finite and non-negative, got {b}")));
    }
    if !(0.0..=1.0).contains(&x1_0) {
        return Err(Error::InvalidState(format!("x1_0 = {x1_0} outside [0, 1]")));
    }
    if n_list.is_empty() {
        return Err(Error::InvalidParams("empty N list".into()));
    }
    let points: Vec<LdPoint> = n_list
        .par_iter()
        .map(|&n| {
            let a = emission_threshold(b, n);
            let probability = if options.binomial_start {
                rare_event_prob_binomial(params, n, x1_0, a, options)?
            } else {
                let init = MicroState::initial(initial_excited(x1_0, n), n)?;
                rare_event_prob(params, &init, a, options)?
            };
            Ok(LdPoint {
                n,
                a,
                probability,
                slope: -probability.ln() / n as f64,
            })
        })
        .collect::<Result<_>>()?;
    let slopes: Vec<f64> = points.iter().map(|p| p.slope).collect();
    let inv_n: Vec<f64> = points.iter().map(|p| 1.0 / p.n as f64).collect();
    let monotone = is_monotone(&slopes);
    if !monotone {
        warn!("slope sequence {slopes:?} is not monotone in N");
    }
    Ok(LdScan {
        b,
        x1_0,
        extrapolated: linear_intercept(&inv_n, &slopes),
        points,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> ExactOptions {
        ExactOptions::default()
    }

    #[test]
    fn zero_threshold_is_certain() {
        let p = RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let init = MicroState::initial(3, 5).unwrap();
        assert_eq!(rare_event_prob(&p, &init, 0, &opts()).unwrap(), 1.0);
    }

    #[test]
    fn single_spontaneous_decay() {
        let init = MicroState::initial(1, 1).unwrap();
        for t in [0.1, 1.0, 3.0] {
            let p = RateParams::new(0.0, 1.0, 0.0, t).unwrap();
            let got = rare_event_prob(&p, &init, 1, &opts()).unwrap();
            assert!((got - (1.0 - (-t).exp())).abs() < 1e-12, "{t}: {got}");
        }
    }

    #[test]
    fn single_stimulated_decay_jumps_two() {
        let init = MicroState::initial(1, 1).unwrap();
        let p = RateParams::new(0.0, 0.0, 1.0, 2.0).unwrap();
        let exact = 1.0 - (-2.0f64).exp();
        for a in [1, 2] {
            let got = rare_event_prob(&p, &init, a, &opts()).unwrap();
            assert!((got - exact).abs() < 1e-12);
        }
        assert_eq!(rare_event_prob(&p, &init, 3, &opts()).unwrap(), 0.0);
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let p = RateParams::new(1.3, 0.7, 2.1, 1.0).unwrap();
        let chain = TruncatedChain::new(&p, 6, 9, 1000).unwrap();
        assert_eq!(chain.len(), 7 * 9 + 1);
        for s in chain.row_sums() {
            assert!(s.abs() < 1e-12);
        }
        assert_eq!(chain.diagonal[chain.absorbing()], 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        let p = RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let init = MicroState::initial(0, 1000).unwrap();
        let o = ExactOptions { budget: 1000, ..opts() };
        assert!(matches!(
            rare_event_prob(&p, &init, 100, &o),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn long_horizons_are_sliced() {
        // N = 1 pure decay at rate 400 over T = 3: ΛT = 1200 needs three slices.
        let p = RateParams::new(0.0, 400.0, 0.0, 3.0).unwrap();
        let init = MicroState::initial(1, 1).unwrap();
        let got = rare_event_prob(&p, &init, 1, &opts()).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
        let p = RateParams::new(0.0, 400.0, 0.0, 0.001).unwrap();
        let got = rare_event_prob(&p, &init, 1, &opts()).unwrap();
        assert!((got - (1.0 - (-0.4f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn two_atom_chain_against_matrix_exponential() {
        // Compare with a dense Taylor-series exponential of the same generator.
        let p = RateParams::new(0.8, 0.6, 0.9, 1.3).unwrap();
        let chain = TruncatedChain::new(&p, 2, 4, 1000).unwrap();
        let n = chain.len();
        let mut q = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (i, d) in chain.diagonal.iter().enumerate() {
            q[(i, i)] = *d;
        }
        for t in &chain.transitions {
            q[(t.from, t.to)] += t.rate;
        }
        // exp(QT) by scaling and squaring.
        let steps = 10;
        let h = q * (p.horizon / f64::from(1 << steps));
        let mut e = nalgebra::DMatrix::<f64>::identity(n, n);
        let mut term = nalgebra::DMatrix::<f64>::identity(n, n);
        for k in 1..30 {
            term = &term * &h / k as f64;
            e += &term;
        }
        for _ in 0..steps {
            e = &e * &e;
        }
        let start = chain.index(1, 0);
        let expected = e[(start, chain.absorbing())];
        let init = MicroState::initial(1, 2).unwrap();
        let got = rare_event_prob(&p, &init, 4, &opts()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn monotone_in_threshold_and_horizon() {
        let init = MicroState::initial(2, 6).unwrap();
        let p = RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let by_a: Vec<f64> = (0..12)
            .map(|a| rare_event_prob(&p, &init, a, &opts()).unwrap())
            .collect();
        assert!(by_a.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let by_t: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&t| rare_event_prob(&p.with_horizon(t), &init, 8, &opts()).unwrap())
            .collect();
        assert!(by_t.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }

    #[test]
    fn binomial_start_mixes_deterministic_starts() {
        let p = RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let n = 5;
        let weights = binomial_pmf(n, 0.3);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let mixed: f64 = (0..=n)
            .map(|m| {
                let init = MicroState::initial(m, n).unwrap();
                weights[m as usize] * rare_event_prob(&p, &init, 6, &opts()).unwrap()
            })
            .sum();
        let got = rare_event_prob_binomial(&p, n, 0.3, 6, &opts()).unwrap();
        assert!((got - mixed).abs() < 1e-13);
    }

    #[test]
    fn typical_event_has_vanishing_slope() {
        let p = RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let scan = ld_slope(&p, 0.2, &[10, 20, 40], 0.5, &opts()).unwrap();
        let last = scan.points.last().unwrap();
        assert!(last.slope < 1e-3, "{scan:?}");
        assert!(scan.points.iter().all(|pt| pt.probability <= 1.0));
    }

    #[test]
    fn rare_slopes_are_positive_and_extrapolate() {
        let p = RateParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let scan = ld_slope(&p, 2.0, &[10, 20, 30], 0.5, &opts()).unwrap();
        assert!(scan.points.iter().all(|pt| pt.slope > 0.0 && pt.probability > 0.0));
        assert_eq!(scan.points[1].a, 40);
        assert!(scan.extrapolated.unwrap() > 0.0);
    }

    #[test]
    fn rounding_guards() {
        assert_eq!(initial_excited(0.3, 10), 3);
        assert_eq!(initial_excited(0.5, 21), 10);
        assert_eq!(emission_threshold(0.7, 10), 7);
        assert_eq!(emission_threshold(2.0, 20), 40);
        assert_eq!(emission_threshold(2.01, 20), 41);
    }

    #[test]
    fn intercept_of_exact_line() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v| 0.7 + 3.0 * v).collect();
        assert!((linear_intercept(&x, &y).unwrap() - 0.7).abs() < 1e-14);
        assert!(linear_intercept(&[1.0], &[1.0]).is_none());
    }
}
