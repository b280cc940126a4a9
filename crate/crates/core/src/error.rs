use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("monotonicity violated: lambda_min(sym(I - W)) = {lambda_min:.6e} < m = {m:.6e}")]
    Monotonicity { lambda_min: f64, m: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported norm index {0} (supported here: {1})")]
    UnsupportedNorm(String, &'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("equilibrium solve did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NotConverged { residual: f64, iterations: usize },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("query ball is not contained in the Lipschitz domain: need radius {needed:.6e}, domain radius {radius:.6e}")]
    BallNotContained { needed: f64, radius: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
