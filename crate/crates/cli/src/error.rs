use emission_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Core(#[from] Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 config, 3 numeric, 4 infeasible, 5 budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidParams(_) | Error::InvalidState(_) | Error::InvalidGrid(_) => 2,
                Error::Numeric(_) | Error::NoConvergence { .. } => 3,
                Error::Infeasible(_) => 4,
                Error::BudgetExceeded { .. } => 5,
            },
            CliError::Io(_) => 3,
        }
    }
}
