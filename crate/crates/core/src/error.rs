use thiserror::Error;

use crate::least_gradient::LgpSolution;
use crate::stability_lab::Exclusion;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value at node {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("expression {expr:?}, column {column}: {message}")]
    Expression { expr: String, column: usize, message: String },

    #[error("inadmissible input: {0}")]
    Inadmissible(String),

    #[error("linear solver did not converge after {iterations} iterations (best relative residual {residual:.3e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("least-gradient solver stopped after {} iterations with relative gap {:.3e}", .0.iterations, .0.gap)]
    LgpNotConverged(Box<LgpSolution>),

    #[error("{admissible} admissible ladder points, at least 4 are needed for the fits; excluded: {}", excluded_list(.exclusions))]
    InsufficientLadder { admissible: usize, exclusions: Vec<Exclusion> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn excluded_list(x: &[Exclusion]) -> String {
    x.iter().map(|e| format!("eps = {} ({})", e.epsilon, e.reason)).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
