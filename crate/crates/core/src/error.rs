use thiserror::Error;

use crate::policy::Criterion;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("score {x} lies outside the domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    /// Both class densities vanish at `x`. `fallback` is the profile value at
    /// the nearest score where it is defined.
    #[error("both class densities vanish at {x} (nearest defined profile value {fallback})")]
    DegenerateDensity { x: f64, fallback: f64 },

    #[error("degenerate qualification profile at {x}")]
    DegenerateProfile { x: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("criterion {0} is not supported by this operation")]
    UnsupportedCriterion(Criterion),

    #[error(
        "no feasible threshold pair at epsilon {epsilon}; smallest feasible epsilon is {min_feasible}"
    )]
    InfeasibleConstraint { epsilon: f64, min_feasible: f64 },

    #[error("solver unavailable: {0}")]
    SolverUnavailable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Config(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag, used in result tables.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "DomainError",
            Error::DegenerateDensity { .. } => "DegenerateDensity",
            Error::DegenerateProfile { .. } => "DegenerateProfile",
            Error::InvalidDistribution(_) => "InvalidDistribution",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InconsistentInput(_) => "InconsistentInput",
            Error::UnsupportedCriterion(_) => "UnsupportedCriterion",
            Error::InfeasibleConstraint { .. } => "InfeasibleConstraint",
            Error::SolverUnavailable(_) => "SolverUnavailable",
            Error::InsufficientData(_) => "InsufficientData",
            Error::Parse { .. } => "ParseError",
            Error::Validation(_) => "ValidationError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Config(_) => "ConfigError",
        }
    }
}
