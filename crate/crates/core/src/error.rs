use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// The generator evaluated to a non-finite value at a visited point.
    #[error("generator domain violation at y = {y}, |z| = {z_norm}")]
    DomainViolation { y: f64, z_norm: f64 },

    #[error("infeasible model: {0}")]
    InfeasibleModel(String),

    /// No analytic subgradient rule and the finite-difference derivative is not two-sided.
    #[error("generator is not differentiable at y = {y}, |z| = {z_norm}")]
    NonSmooth { y: f64, z_norm: f64 },

    #[error("convex conjugate is +infinity at beta = {beta}")]
    InfiniteConjugate { beta: f64 },

    #[error("no feasible evaluation: {0}")]
    NoFeasiblePoint(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
