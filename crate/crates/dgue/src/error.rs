//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("two-point deformation needs an even dimension, got n = {0}")]
    Parity(usize),

    #[error("explicit deformation has {got} entries, expected {expected}")]
    Length { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluation at the atom {0}")]
    Pole(f64),

    #[error("solver failed for {what} at lambda = {lambda} after {iterations} iterations (residual {residual:e})")]
    Solver {
        what: &'static str,
        lambda: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contour geometry: {0}")]
    Geometry(String),

    #[error("kernel evaluation: {0}")]
    Evaluation(String),

    #[error("ill-conditioned residue sum: {0}; use the contour method instead")]
    Conditioning(String),

    #[error("lambda = {0} is outside the bulk")]
    OutOfBulk(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("symbolic budget exceeded: {0}")]
    Budget(String),

    #[error("generator universes differ ({0} vs {1})")]
    Universe(usize, usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid_dimension",
            Error::Parity(_) => "parity",
            Error::Length { .. } => "length",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Pole(_) => "pole",
            Error::Solver { .. } => "solver",
            Error::Numerical(_) => "numerical",
            Error::Geometry(_) => "geometry",
            Error::Evaluation(_) => "evaluation",
            Error::Conditioning(_) => "conditioning",
            Error::OutOfBulk(_) => "out_of_bulk",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Degenerate(_) => "degenerate",
            Error::Budget(_) => "budget",
            Error::Universe(..) => "universe",
            Error::Io { .. } => "io",
        }
    }

    /// True for errors that come from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver { .. }
                | Error::Numerical(_)
                | Error::Evaluation(_)
                | Error::Conditioning(_)
                | Error::Budget(_)
        )
    }
}
