use thiserror::Error;

/// Errors raised by the sizing engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter domain: {0}")]
    ParameterDomain(String),

    #[error("state space of {states} states exceeds the cap of {cap}")]
    Capacity { states: usize, cap: usize },

    #[error("unstable system: mean demand {mean_demand} is not below grid power {grid_power}")]
    Stability { mean_demand: f64, grid_power: f64 },

    #[error("numerical failure in {stage}: residual {residual:e}")]
    Numerical { stage: &'static str, residual: f64 },

    #[error("boundary system is singular (condition number {condition:e})")]
    Conditioning { condition: f64 },

    #[error("domain error in {helper}: {detail}")]
    Domain { helper: &'static str, detail: String },

    #[error("engine {engine} does not support this population: {detail}")]
    UnsupportedEngine { engine: &'static str, detail: String },

    #[error("unsupported dimension: expected {expected} classes, got {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("estimator: {0}")]
    Estimator(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("savings undefined: {0}")]
    UndefinedSavings(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short stable name of the error class, used for CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::ParameterDomain(_) => "parameter-domain",
            Error::Capacity { .. } => "capacity",
            Error::Stability { .. } => "stability",
            Error::Numerical { .. } => "numerical",
            Error::Conditioning { .. } => "conditioning",
            Error::Domain { .. } => "domain",
            Error::UnsupportedEngine { .. } => "unsupported-engine",
            Error::UnsupportedDimension { .. } => "unsupported-dimension",
            Error::Infeasible(_) => "infeasible",
            Error::Estimator(_) => "estimator",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::UndefinedSavings(_) => "undefined-savings",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
