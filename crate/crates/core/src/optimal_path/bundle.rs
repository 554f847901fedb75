//! Optimal paths for a fixed tilt.
//!
//! The Hamiltonian is
//! `H = λ(1−x1)(e^{κ1}−1) + μ x1 (e^{−κ1+κ2}−1) + ν x1 (e^{−κ1+2κ3}−1)`.
//! It is autonomous, so `E = H(x1(0), κ1(0))` is conserved and
//! `x1(t) = (λ(e^{κ1}−1) − E) / κ̇1(t)`. Where `κ̇1` is too small for that
//! quotient to be trusted (for zero tilt it vanishes identically, for large
//! tilts it is exponentially small away from `T`) the linear equation
//! `ẋ1 = λ e^{κ1}(1 − x1) − (μe^{κ2} + νe^{2κ3}) e^{−κ1} x1` is integrated
//! instead, with an exponential midpoint step that stays stable however
//! stiff the tilt makes it.

use serde::Serialize;

use super::riccati::Tilt;
use crate::error::{Error, Result};
use crate::model::{RateParams, TimeGrid};
use crate::ratefn::{path_rate, trapezoid, PathSamples};

/// `|κ̇1|` below this fraction of the quotient's scale selects integration.
const CLOSED_FORM_TOL: f64 = 1e-6;
/// Closed form and integration must agree this well where they meet.
const HANDOFF_TOL: f64 = 1e-6;
/// Bound on `h |κ̇1|` for one integration sub-step.
const SUBSTEP_DRIFT: f64 = 1e-3;
const MAX_SUBSTEPS: usize = 1 << 22;
const QUOTIENT_NOISE: f64 = 100.0 * f64::EPSILON / CLOSED_FORM_TOL;

pub fn hamiltonian(x1: f64, kappa1: f64, params: &RateParams, tilt: &Tilt) -> f64 {
    let y = kappa1.exp();
    params.lambda * (1.0 - x1) * (y - 1.0)
        + x1 * (tilt.spont_factor / y - params.mu)
        + x1 * (tilt.stim_factor / y - params.nu)
}

/// Energy-conservation solution for `x1(t)`, or `None` where it is
/// ill-conditioned.
fn closed_x1(params: &RateParams, tilt: &Tilt, energy: f64, t: f64) -> Option<f64> {
    let den = tilt.kappa1_dot(t);
    let y = tilt.exp_kappa1(t);
    let scale = params.lambda * (y + 1.0)
        + energy.abs()
        + (tilt.spont_factor + tilt.stim_factor) / y
        + params.mu
        + params.nu;
    if den.abs() < CLOSED_FORM_TOL * scale {
        return None;
    }
    Some((params.lambda * (y - 1.0) - energy) / den)
}

/// Integrals accumulated over one grid interval.
#[derive(Debug, Clone, Copy, Default)]
struct Increment {
    /// `∫ x1 e^{−κ1}`.
    kernel: f64,
    /// `∫ x1`.
    occupation: f64,
}

impl std::ops::Add for Increment {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            kernel: self.kernel + o.kernel,
            occupation: self.occupation + o.occupation,
        }
    }
}

/// `(e^z − 1) / z`.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z * (0.5 + z / 6.0)
    } else {
        z.exp_m1() / z
    }
}

/// `∫₀¹ s e^{z s} ds = (e^z (z − 1) + 1) / z²`.
fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z * (1.0 / 3.0 + z / 8.0)
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

/// `∫₀ʰ (e^{ρτ} − e^{−qτ}) / (q + ρ) dτ`, a divided difference of
/// `k ↦ h φ1(kh)` between `ρ` and `−q`.
fn lag_integral(rho: f64, q: f64, h: f64) -> f64 {
    let width = (q + rho) * h;
    if width.abs() < 1e-3 {
        h * h * phi2(0.5 * (rho - q) * h)
    } else {
        h * (phi1(rho * h) - phi1(-q * h)) / (q + rho)
    }
}

/// Integrates `ẋ1 = λ e^{κ1}(1 − x1) − c e^{−κ1} x1` across `[t0, t1]`.
///
/// On each sub-step the relaxation rate `q = λe^{κ1} + c e^{−κ1}` is frozen
/// at the midpoint and the quasi-static target `λe^{2κ1} / (λe^{2κ1} + c)`
/// is fitted by `α + β e^{ρτ}`, with `ρ` the growth rate of `κ̇1` across the
/// sub-step. The deviation from that target then solves exactly. Inside a
/// stiff layer `κ̇1` grows about as fast as `q` relaxes, which a linear
/// target fit would get wrong by a fixed fraction of the lag.
fn propagate(params: &RateParams, tilt: &Tilt, t0: f64, t1: f64, x0: f64) -> (f64, Increment) {
    let c = tilt.spont_factor + tilt.stim_factor;
    let target_at = |y: f64| {
        let gain = params.lambda * y * y;
        gain / (gain + c)
    };
    let mut x = x0;
    let mut ta = t0;
    let mut k_start = tilt.kappa1(t0);
    let mut target_start = target_at(k_start.exp());
    let mut slope_start = tilt.kappa1_dot(t0);
    let mut h = (t1 - t0).min(SUBSTEP_DRIFT / slope_start.abs().max(f64::MIN_POSITIVE));
    let mut inc = Increment::default();
    // Below this width the drift bound is unreachable in floating point.
    let h_min = 8.0 * f64::EPSILON * t1.abs().max(t0.abs()).max(f64::MIN_POSITIVE);
    let mut steps = 0usize;
    while ta < t1 {
        // Shrink until κ1 moves by at most SUBSTEP_DRIFT across the sub-step.
        let (tb, k_end) = loop {
            let tb = if steps >= MAX_SUBSTEPS || ta + h >= t1 { t1 } else { ta + h.max(h_min) };
            let k_end = tilt.kappa1(tb);
            if (k_end - k_start).abs() <= SUBSTEP_DRIFT || h <= h_min || steps >= MAX_SUBSTEPS {
                break (tb, k_end);
            }
            h = 0.5 * (tb - ta);
        };
        let h_step = tb - ta;
        let y = tilt.exp_kappa1(ta + 0.5 * h_step);
        let q = params.lambda * y + c / y;
        let target_end = target_at(k_end.exp());
        let slope_end = tilt.kappa1_dot(tb);
        let ratio = slope_end / slope_start;
        let rho = if ratio.is_finite() && ratio > 0.0 { ratio.ln() / h_step } else { 0.0 };

        // Target α + β e^{ρτ}; its derivative βρ e^{ρτ} forces the deviation.
        let rise = target_end - target_start;
        let beta_rho = rise / (h_step * phi1(rho * h_step));
        let d0 = x - target_start;
        let decay = (-q * h_step).exp();
        // ∫₀ʰ e^{−q(h−s)} e^{ρs} ds.
        let forced = if ((q + rho) * h_step).abs() < 1e-3 {
            h_step * decay * phi1((q + rho) * h_step)
        } else {
            ((rho * h_step).exp() - decay) / (q + rho)
        };
        let integral = target_start * h_step
            + rise_integral(rise, rho, h_step)
            + d0 * h_step * phi1(-q * h_step)
            - beta_rho * lag_integral(rho, q, h_step);
        x = target_end + d0 * decay - beta_rho * forced;
        inc.kernel += integral / y;
        inc.occupation += integral;
        ta = tb;
        k_start = k_end;
        target_start = target_end;
        slope_start = slope_end;
        h = 2.0 * h_step;
        steps += 1;
    }
    (x, inc)
}

/// `∫₀ʰ (T(τ) − T(0)) dτ` for `T = α + β e^{ρτ}` rising by `rise` over `h`.
fn rise_integral(rise: f64, rho: f64, h: f64) -> f64 {
    // β (e^{ρh} − 1)/ρ − βh with β = rise / (e^{ρh} − 1).
    let z = rho * h;
    if z.abs() < 1e-4 {
        rise * h * (0.5 - z / 12.0)
    } else {
        rise * h * (1.0 / z - 1.0 / z.exp_m1())
    }
}

/// Adaptive Simpson on the closed-form path over one interval.
fn closed_increment(params: &RateParams, tilt: &Tilt, energy: f64, t0: f64, t1: f64) -> Increment {
    let eval = |t: f64| -> [f64; 2] {
        let y = tilt.exp_kappa1(t);
        let x = (params.lambda * (y - 1.0) - energy) / tilt.kappa1_dot(t);
        [x / y, x]
    };
    let fa = eval(t0);
    let fb = eval(t1);
    let fm = eval(0.5 * (t0 + t1));
    let whole = simpson_step(t0, t1, fa, fm, fb);
    let tol = 1e-13 * (whole[0].abs() + whole[1].abs()).max(1e-300);
    let r = adaptive_simpson(&eval, t0, t1, fa, fm, fb, whole, tol, 20);
    Increment {
        kernel: r[0],
        occupation: r[1],
    }
}

fn simpson_step(a: f64, b: f64, fa: [f64; 2], fm: [f64; 2], fb: [f64; 2]) -> [f64; 2] {
    let w = (b - a) / 6.0;
    [w * (fa[0] + 4.0 * fm[0] + fb[0]), w * (fa[1] + 4.0 * fm[1] + fb[1])]
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> [f64; 2],
    a: f64,
    b: f64,
    fa: [f64; 2],
    fm: [f64; 2],
    fb: [f64; 2],
    whole: [f64; 2],
    tol: f64,
    depth: u32,
) -> [f64; 2] {
    let m = 0.5 * (a + b);
    let flm = f(0.5 * (a + m));
    let frm = f(0.5 * (m + b));
    let left = simpson_step(a, m, fa, flm, fm);
    let right = simpson_step(m, b, fm, frm, fb);
    let err = (left[0] + right[0] - whole[0]).abs() + (left[1] + right[1] - whole[1]).abs();
    // The quotient is accepted only while its condition number stays below
    // 1/CLOSED_FORM_TOL, so its relative noise can reach 1e2 · ε / CLOSED_FORM_TOL.
    let noise = QUOTIENT_NOISE * (left[0].abs() + right[0].abs() + left[1].abs() + right[1].abs());
    if depth == 0 || err <= 15.0 * tol.max(noise) {
        return [
            left[0] + right[0] + (left[0] + right[0] - whole[0]) / 15.0,
            left[1] + right[1] + (left[1] + right[1] - whole[1]) / 15.0,
        ];
    }
    let l = adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
    let r = adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    [l[0] + r[0], l[1] + r[1]]
}

/// `x1` on a grid plus the running integrals the bundle needs.
#[derive(Debug, Clone)]
pub(crate) struct Marched {
    pub x1: Vec<f64>,
    /// Cumulative `∫₀ᵗ x1 e^{−κ1} ds` at each grid point.
    pub kernel: Vec<f64>,
    pub occupation: f64,
    pub energy: f64,
    pub handoff_gap: f64,
}

pub(crate) fn march(params: &RateParams, tilt: &Tilt, x1_0: f64, grid: &TimeGrid) -> Result<Marched> {
    if !(0.0..=1.0).contains(&x1_0) {
        return Err(Error::InvalidState(format!("x1(0) = {x1_0} outside [0, 1]")));
    }
    if grid.last() > tilt.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidGrid("grid extends beyond the horizon".into()));
    }
    let energy = hamiltonian(x1_0, tilt.kappa1(0.0), params, tilt);
    let times = grid.times();
    let mut x1 = Vec::with_capacity(times.len());
    let mut kernel = Vec::with_capacity(times.len());
    x1.push(x1_0);
    kernel.push(0.0);
    let mut occupation = 0.0;
    let mut handoff_gap: f64 = 0.0;
    let mut closed_prev = closed_x1(params, tilt, energy, 0.0).is_some();
    let mut x = x1_0;

    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let closed_next = closed_x1(params, tilt, energy, t1);
        let mid_ok = closed_x1(params, tilt, energy, 0.5 * (t0 + t1)).is_some();
        let inc = match closed_next {
            Some(xc) if closed_prev && mid_ok => {
                x = xc;
                closed_increment(params, tilt, energy, t0, t1)
            }
            _ => {
                let (xn, inc) = propagate(params, tilt, t0, t1, x);
                match closed_next {
                    Some(xc) => {
                        let gap = (xn - xc).abs();
                        if gap > HANDOFF_TOL {
                            return Err(Error::Numeric(format!(
                                "closed-form x1 = {xc} and integrated x1 = {xn} disagree at t = {t1}"
                            )));
                        }
                        handoff_gap = handoff_gap.max(gap);
                        x = xc;
                    }
                    None => x = xn,
                }
                inc
            }
        };
        if !x.is_finite() {
            return Err(Error::Numeric(format!("non-finite x1 at t = {t1}")));
        }
        closed_prev = closed_next.is_some();
        occupation += inc.occupation;
        kernel.push(kernel.last().unwrap() + inc.kernel);
        x1.push(x);
    }
    Ok(Marched {
        x1,
        kernel,
        occupation,
        energy,
        handoff_gap,
    })
}

/// `x1(t)` on the grid for the given tilt and initial excited fraction.
pub fn x1_path(params: &RateParams, tilt: &Tilt, x1_0: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    Ok(march(params, tilt, x1_0, grid)?.x1)
}

/// Emission paths from an `x1` sample by trapezoid quadrature of
/// `x1 e^{−κ1}`. Returns `(x2, x3, B)`.
pub fn emissions(tilt: &Tilt, x1: &[f64], grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if x1.len() != grid.len() {
        return Err(Error::InvalidGrid("x1 length must match the grid".into()));
    }
    let t = grid.times();
    let integrand: Vec<f64> = t
        .iter()
        .zip(x1)
        .map(|(&t, &x)| x / tilt.exp_kappa1(t))
        .collect();
    let mut kernel = vec![0.0; t.len()];
    for i in 1..t.len() {
        kernel[i] = kernel[i - 1] + trapezoid(&t[i - 1..=i], &integrand[i - 1..=i]);
    }
    let x2: Vec<f64> = kernel.iter().map(|k| tilt.spont_factor * k).collect();
    let x3: Vec<f64> = kernel.iter().map(|k| 2.0 * tilt.stim_factor * k).collect();
    let b = x2.last().unwrap() + x3.last().unwrap();
    Ok((x2, x3, b))
}

/// Optimal path for one tilt, with its emission and rate.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalPathBundle {
    pub params: RateParams,
    pub x1_0: f64,
    pub grid: TimeGrid,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
    pub kappa1: Vec<f64>,
    pub tilt: Tilt,
    pub energy: f64,
    pub emission: f64,
    pub rate: f64,
    pub x1_bar: f64,
    /// Largest closed-form / integration disagreement where the two meet.
    pub handoff_gap: f64,
}

/// Builds the bundle for a fixed tilt.
///
/// The rate uses `κ1 ẋ1 = d(κ1 x1)/dt − κ̇1 x1` and `κ̇1 x1 = λ(e^{κ1}−1) − E`
/// along the path, which leaves
/// `I = −κ1(0) x1(0) − λ∫(e^{κ1}−1) dt + κ2 x2(T) + κ3 x3(T)`.
/// Spacing grows geometrically away from both ends.
const LAYER_RESOLUTION: f64 = 0.02;
const LAYER_GROWTH: f64 = 0.05;

/// Grid with at most the uniform spacing of `points` points and spacing
/// `LAYER_RESOLUTION / spread` at both ends.
fn layer_grid(tilt: &Tilt, points: usize) -> Result<TimeGrid> {
    let horizon = tilt.horizon();
    let h = horizon / (points.max(2) - 1) as f64;
    let fine = (LAYER_RESOLUTION / tilt.spread()).min(h);
    let mut times = vec![0.0];
    let mut t: f64 = 0.0;
    loop {
        let edge = t.min(horizon - t).max(0.0);
        let step = (fine + LAYER_GROWTH * edge).min(h);
        if t + 1.5 * step >= horizon {
            break;
        }
        t += step;
        times.push(t);
    }
    times.push(horizon);
    TimeGrid::new(times)
}

pub fn build_bundle(
    params: &RateParams,
    tilt: &Tilt,
    x1_0: f64,
    grid: &TimeGrid,
) -> Result<OptimalPathBundle> {
    let m = march(params, tilt, x1_0, grid)?;
    let horizon = params.horizon;
    let x2: Vec<f64> = m.kernel.iter().map(|k| tilt.spont_factor * k).collect();
    let x3: Vec<f64> = m.kernel.iter().map(|k| 2.0 * tilt.stim_factor * k).collect();
    let x2_t = *x2.last().unwrap();
    let x3_t = *x3.last().unwrap();
    let kappa1: Vec<f64> = grid.times().iter().map(|&t| tilt.kappa1(t)).collect();

    let momentum_work =
        params.lambda * (tilt.integral_exp_kappa1(0.0, horizon) - horizon);
    let mut rate = -tilt.kappa1(0.0) * x1_0 - momentum_work;
    if tilt.spont_factor > 0.0 {
        rate += tilt.kappa2 * x2_t;
    }
    if tilt.stim_factor > 0.0 {
        rate += tilt.kappa3 * x3_t;
    }
    if !rate.is_finite() {
        return Err(Error::Numeric(format!("non-finite rate for tilt {tilt:?}")));
    }

    Ok(OptimalPathBundle {
        params: *params,
        x1_0,
        grid: grid.clone(),
        x1: m.x1,
        x2,
        x3,
        kappa1,
        tilt: *tilt,
        energy: m.energy,
        emission: x2_t + x3_t,
        rate,
        x1_bar: m.occupation / horizon,
        handoff_gap: m.handoff_gap,
    })
}

impl OptimalPathBundle {
    /// `max_t |H(x1(t), κ1(t)) − E|`.
    pub fn energy_residual(&self) -> f64 {
        self.x1
            .iter()
            .zip(&self.kappa1)
            .map(|(&x, &k)| (hamiltonian(x, k, &self.params, &self.tilt) - self.energy).abs())
            .fold(0.0, f64::max)
    }

    pub fn path_samples(&self) -> PathSamples {
        PathSamples {
            grid: self.grid.clone(),
            x1: self.x1.clone(),
            x2: self.x2.clone(),
            x3: self.x3.clone(),
            velocities: None,
        }
    }

    /// `path_rate` of the same tilt rebuilt on a grid graded into the end
    /// layers of width `1/(λ(r2 − r1))`, where a uniform grid under-resolves
    /// the Lagrangian at large emission.
    pub fn quadrature_rate(&self) -> Result<f64> {
        let grid = layer_grid(&self.tilt, self.grid.len())?;
        let bundle = build_bundle(&self.params, &self.tilt, self.x1_0, &grid)?;
        path_rate(&bundle.path_samples(), &self.params)
    }

    /// Fraction of the emission that is spontaneous, `x2(T) / B`.
    pub fn spont_share(&self) -> f64 {
        if self.emission == 0.0 {
            0.0
        } else {
            self.x2.last().unwrap() / self.emission
        }
    }
}
