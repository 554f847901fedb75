//! Local Lagrangian and the path rate functional.
//!
//! The Lagrangian at excited fraction `x1` is the Legendre transform of the
//! jump Hamiltonian `Σ r_c (e^{κ·u_c} − 1)` over the three channels. Because
//! the jump vectors form a basis of R³, a velocity determines the channel
//! fluxes uniquely and the transform has the closed form
//! `Σ f ln(f/r) − f + r`. [`legendre_sup_numeric`] computes the same number
//! by direct maximization over `κ` and is kept as an independent check.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{scaled_rates, ChannelRates, RateParams, TimeGrid};

/// Path derivative `(ẋ1, ẋ2, ẋ3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

impl Velocity {
    pub fn new(v1: f64, v2: f64, v3: f64) -> Self {
        Self { v1, v2, v3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.v1, self.v2, self.v3]
    }

    /// Velocity of the fluid limit at `x1`.
    pub fn fluid(params: &RateParams, x1: f64) -> Self {
        let r = scaled_rates(params, x1);
        Self::new(r.up - r.spont - r.stim, r.spont, 2.0 * r.stim)
    }

    fn is_finite(&self) -> bool {
        self.v1.is_finite() && self.v2.is_finite() && self.v3.is_finite()
    }
}

/// Channel fluxes whose jumps add up to a given velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxDecomposition {
    pub f_up: f64,
    pub f_spont: f64,
    pub f_stim: f64,
}

impl FluxDecomposition {
    pub fn velocity(&self) -> Velocity {
        Velocity::new(
            self.f_up - self.f_spont - self.f_stim,
            self.f_spont,
            2.0 * self.f_stim,
        )
    }

    fn as_array(&self) -> [f64; 3] {
        [self.f_up, self.f_spont, self.f_stim]
    }
}

pub fn flux_decompose(v: &Velocity) -> FluxDecomposition {
    let f_spont = v.v2;
    let f_stim = 0.5 * v.v3;
    FluxDecomposition {
        f_up: v.v1 + f_spont + f_stim,
        f_spont,
        f_stim,
    }
}

fn rate_array(r: &ChannelRates) -> [f64; 3] {
    [r.up, r.spont, r.stim]
}

/// `f ln(f/r) − f + r` for one channel, with `0 ln 0 = 0`.
fn channel_cost(f: f64, r: f64) -> f64 {
    if f < 0.0 {
        f64::INFINITY
    } else if f == 0.0 {
        r
    } else if r == 0.0 {
        f64::INFINITY
    } else {
        f * (f / r).ln() - f + r
    }
}

/// Closed-form local Lagrangian `ℓ(x1, v)`; `+∞` for infeasible velocities.
pub fn local_lagrangian(x1: f64, v: &Velocity, params: &RateParams) -> f64 {
    let f = flux_decompose(v);
    lagrangian_from_flux(&f, &scaled_rates(params, x1))
}

fn lagrangian_from_flux(f: &FluxDecomposition, r: &ChannelRates) -> f64 {
    f.as_array()
        .iter()
        .zip(rate_array(r))
        .map(|(&f, r)| channel_cost(f, r))
        .sum()
}

/// Result of the numeric supremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreSup {
    pub value: f64,
    pub kappa: [f64; 3],
    pub iterations: usize,
}

const JUMPS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 2.0]];
const SUP_GRAD_TOL: f64 = 1e-10;
const SUP_MAX_ITER: usize = 200;

/// Maximizes `κ·v − Σ r_c (e^{κ·u_c} − 1)` over `κ ∈ R³` by damped Newton
/// ascent from `κ = 0`. The supremum is attained in the interior case (all
/// fluxes and rates strictly positive). A zero flux sends one conjugate to
/// `−∞` while the gradient still vanishes, so the tolerance is met at a
/// finite point; an infinite supremum exhausts the iteration budget.
pub fn legendre_sup_numeric(x1: f64, v: &Velocity, params: &RateParams) -> Result<LegendreSup> {
    if !v.is_finite() {
        return Err(Error::Numeric("velocity must be finite".into()));
    }
    let rates = rate_array(&scaled_rates(params, x1));
    let vel = Vector3::from(v.as_array());
    let jumps: Vec<Vector3<f64>> = JUMPS.iter().map(|u| Vector3::from(*u)).collect();

    let objective = |k: &Vector3<f64>| -> f64 {
        let mut g = k.dot(&vel);
        for (u, &r) in jumps.iter().zip(&rates) {
            g -= r * (k.dot(u).exp() - 1.0);
        }
        g
    };
    let gradient = |k: &Vector3<f64>| -> Vector3<f64> {
        let mut g = vel;
        for (u, &r) in jumps.iter().zip(&rates) {
            g -= r * k.dot(u).exp() * u;
        }
        g
    };

    let mut kappa = Vector3::zeros();
    let mut value = objective(&kappa);
    for iter in 0..SUP_MAX_ITER {
        let mut grad = vel;
        let mut hess = Matrix3::zeros();
        for (u, &r) in jumps.iter().zip(&rates) {
            let w = r * kappa.dot(u).exp();
            grad -= w * u;
            hess -= w * u * u.transpose();
        }
        let gnorm = grad.norm();
        if gnorm <= SUP_GRAD_TOL {
            return Ok(LegendreSup {
                value,
                kappa: [kappa[0], kappa[1], kappa[2]],
                iterations: iter,
            });
        }
        let step = match hess.lu().solve(&(-grad)) {
            Some(s) if s.iter().all(|c| c.is_finite()) => s,
            _ => grad,
        };
        // The Newton direction is an ascent direction whenever the Hessian is
        // negative definite; fall back to the gradient otherwise.
        let dir = if step.dot(&grad) > 0.0 { step } else { grad };

        // Near the optimum objective changes drop below roundoff, so a full
        // step that shrinks the gradient is accepted on that ground alone.
        let full = kappa + dir;
        if gradient(&full).norm() < gnorm {
            kappa = full;
            value = objective(&kappa);
            continue;
        }
        let mut t = 1.0;
        let slope = dir.dot(&grad);
        loop {
            let trial = kappa + t * dir;
            let trial_value = objective(&trial);
            if trial_value.is_finite() && trial_value >= value + 1e-4 * t * slope {
                kappa = trial;
                value = trial_value;
                break;
            }
            t *= 0.5;
            if t < 1e-16 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: gnorm,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: SUP_MAX_ITER,
        residual: gradient(&kappa).norm(),
    })
}

/// A path sampled on a time grid. Velocities are optional; when absent they
/// are estimated by second-order finite differences (three-point central
/// on interior points, three-point one-sided at the ends, both valid on
/// non-uniform grids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSamples {
    pub grid: TimeGrid,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
    pub velocities: Option<Vec<Velocity>>,
}

impl PathSamples {
    pub fn new(grid: TimeGrid, x1: Vec<f64>, x2: Vec<f64>, x3: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if x1.len() != n || x2.len() != n || x3.len() != n {
            return Err(Error::InvalidGrid("path columns must match the grid length".into()));
        }
        Ok(Self {
            grid,
            x1,
            x2,
            x3,
            velocities: None,
        })
    }

    pub fn with_velocities(mut self, velocities: Vec<Velocity>) -> Result<Self> {
        if velocities.len() != self.grid.len() {
            return Err(Error::InvalidGrid("velocity count must match the grid".into()));
        }
        self.velocities = Some(velocities);
        Ok(self)
    }

    pub fn velocities(&self) -> Result<Vec<Velocity>> {
        if let Some(v) = &self.velocities {
            return Ok(v.clone());
        }
        let t = self.grid.times();
        let d1 = finite_difference(t, &self.x1)?;
        let d2 = finite_difference(t, &self.x2)?;
        let d3 = finite_difference(t, &self.x3)?;
        Ok((0..t.len()).map(|i| Velocity::new(d1[i], d2[i], d3[i])).collect())
    }
}

pub(crate) fn finite_difference(t: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n < 2 {
        return Err(Error::InvalidGrid("need at least 2 points to differentiate".into()));
    }
    if n == 2 {
        let d = (f[1] - f[0]) / (t[1] - t[0]);
        return Ok(vec![d, d]);
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let h1 = t[i] - t[i - 1];
        let h2 = t[i + 1] - t[i];
        d[i] = -h2 / (h1 * (h1 + h2)) * f[i - 1]
            + (h2 - h1) / (h1 * h2) * f[i]
            + h1 / (h2 * (h1 + h2)) * f[i + 1];
    }
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    d[0] = -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1]
        - h1 / (h2 * (h1 + h2)) * f[2];
    let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
    d[n - 1] = h2 / (h1 * (h1 + h2)) * f[n - 3] - (h1 + h2) / (h1 * h2) * f[n - 2]
        + (h1 + 2.0 * h2) / (h2 * (h1 + h2)) * f[n - 1];
    Ok(d)
}

/// Relative size below which a flux is treated as finite-difference roundoff.
const FLUX_ROUNDOFF: f64 = 1e-12;

/// `I = ∫ ℓ(x1, v) dt` by the composite trapezoid rule on the path's grid.
pub fn path_rate(path: &PathSamples, params: &RateParams) -> Result<f64> {
    let ell = path_rate_profile(path, params)?;
    if ell.iter().any(|l| l.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    Ok(trapezoid(path.grid.times(), &ell))
}

/// Pointwise Lagrangian values along a path.
pub fn path_rate_profile(path: &PathSamples, params: &RateParams) -> Result<Vec<f64>> {
    if path.grid.len() < 2 {
        return Err(Error::InvalidGrid("path_rate needs at least 2 grid points".into()));
    }
    let vel = path.velocities()?;
    Ok(path
        .x1
        .iter()
        .zip(&vel)
        .map(|(&x1, v)| {
            let scale = 1.0 + v.v1.abs().max(v.v2.abs()).max(v.v3.abs());
            let mut f = flux_decompose(v);
            for c in [&mut f.f_up, &mut f.f_spont, &mut f.f_stim] {
                if c.abs() <= FLUX_ROUNDOFF * scale {
                    *c = 0.0;
                }
            }
            lagrangian_from_flux(&f, &scaled_rates(params, x1.clamp(0.0, 1.0)))
        })
        .collect())
}

pub(crate) fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}
