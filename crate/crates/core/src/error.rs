use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid problem: non-finite {quantity} at {location}")]
    InvalidProblem { quantity: &'static str, location: String },

    #[error("unknown problem `{name}`; valid names: {valid}")]
    UnknownProblem { name: String, valid: &'static str },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("field is not periodic along axis {axis} (discrepancy {discrepancy:e})")]
    NonPeriodic { axis: usize, discrepancy: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("kernel build failed at state node {state}, control node {control}: entry {value:e}")]
    KernelBuild {
        state: usize,
        control: usize,
        value: f64,
    },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("HJB solver stagnated after {iterations} iterations (residual history {history:?})")]
    HjbConvergence { iterations: usize, history: Vec<f64> },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("mode error: {0}")]
    Mode(String),
}

impl Error {
    /// True for failures of a numerical solver, as opposed to invalid input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::KernelBuild { .. }
                | Error::Convergence { .. }
                | Error::HjbConvergence { .. }
                | Error::Solver(_)
        )
    }
}
