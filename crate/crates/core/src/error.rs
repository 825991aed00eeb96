use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("root not bracketed on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("bisection did not converge after {iterations} iterations (best iterate {best})")]
    NoConvergence { best: f64, iterations: usize },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("bound ordering violated: lower {lower} > upper {upper}")]
    BoundOrdering { lower: f64, upper: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
