//! Hamiltonian optimal paths: closed-form momentum, energy-conservation
//! paths, the constrained tilt search, and large-emission probes.

mod bundle;
mod probes;
mod riccati;
mod search;

pub use bundle::{build_bundle, emissions, hamiltonian, x1_path, OptimalPathBundle};
pub use probes::{
    asymptotic_j, asymptotic_minimizer, balance_ratio, chaos_gap, emission_shares, share_balance,
    share_constraint_residual, AsymptoticMinimizer,
};
pub use riccati::{kappa1_at, quadratic_roots, riccati_roots, Tilt};
pub use search::{fluid_emission, solve_tilt_for_target, SearchOptions, TiltSolution};
