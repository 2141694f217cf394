use thiserror::Error;

/// Errors raised by the solvers and operators in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0}, expected 2 or 3")]
    Dimension(usize),
    #[error("grid too small: axis {axis} has {n} cells, need at least 4")]
    GridTooSmall { axis: usize, n: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("non-finite value in field")]
    NonFinite,
    #[error("incompatible Neumann data: mean {mean:e} exceeds tolerance {tol:e}")]
    IncompatibleNeumann { mean: f64, tol: f64 },
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("singular potential evaluation at s = {0}")]
    SingularPotential(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel configuration: {0}")]
    KernelConfig(String),
    #[error("CFL violated: dt*max|v|/h = {courant:.4} > 0.9")]
    Cfl { courant: f64 },
    #[error("Newton iteration failed (residual {residual:e} after {iterations} iterations)")]
    NewtonFailed { iterations: usize, residual: f64 },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("line search failed: step underflow at iteration {iteration}")]
    LineSearch { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
