use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("did not converge after {iterations} iterations (gradient norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("state space of {states} states exceeds budget of {budget}")]
    BudgetExceeded { states: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
