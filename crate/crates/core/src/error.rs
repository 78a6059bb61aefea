use thiserror::Error;

use crate::direct::SolveReport;
use crate::problems::expr::{EvalError, ParseError};

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("gamma function pole at {0} (non-positive integer)")]
    GammaPole(f64),

    #[error("order {alpha} out of range for {op}: expected {expected}")]
    OrderOutOfRange {
        op: &'static str,
        alpha: f64,
        expected: &'static str,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("unknown builtin problem `{0}` (known: example1, example2)")]
    UnknownBuiltin(String),

    #[error("order {alpha} requires {needed} initial derivatives, got {got}")]
    MissingInitialDerivatives {
        alpha: f64,
        needed: usize,
        got: usize,
    },

    #[error("holonomic hypothesis violated: |dg/dx2| = {value:e} at t = {t}")]
    HolonomicHypothesis { t: f64, value: f64 },

    /// Damping exhausted before the gradient norm could be reduced. The
    /// best iterate reached so far is kept in the report.
    #[error("solver stalled after {} iterations (gradient norm {:e})",
            report.iterations, report.gradient_norm)]
    SolverStalled { report: Box<SolveReport> },

    #[error("problem file: {0}")]
    ProblemFile(String),

    #[error("solution file: {0}")]
    SolutionFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
