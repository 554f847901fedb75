//! Two-level atom emission as a jump process: exact and tilted simulation,
//! the fluid limit, the path rate functional, Hamiltonian optimal paths and
//! exact tail probabilities on a truncated chain.

pub mod error;
pub mod exact;
pub mod export;
pub mod model;
pub mod optimal_path;
pub mod ratefn;
pub mod ssa;

pub use error::{Error, Result};
pub use model::{
    fluid_solve, transition_rates, Channel, FluidPath, MicroState, RateParams, ScaledState,
    TimeGrid,
};
