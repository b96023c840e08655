use thiserror::Error;

pub type Result<T> = std::result::Result<T, GnsError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnsError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("divergent integral `{name}`: tail fraction {fraction:.3e} exceeds {tol:.1e}")]
    Divergence { name: String, fraction: f64, tol: f64 },
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
}
