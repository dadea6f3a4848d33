use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported derivative order {0} (closed forms exist up to order 4)")]
    UnsupportedOrder(u8),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("quadrature failed to converge: last estimate {last}, previous estimate {previous}")]
    Quadrature { last: f64, previous: f64 },

    #[error("non-finite integrand value at zeta = {zeta}")]
    NonFiniteIntegrand { zeta: f64 },

    #[error("nested quadrature needs {needed} evaluations, budget is {budget}")]
    Budget { needed: usize, budget: usize },

    #[error("envelope term u{term} is not finite at x = {x}")]
    Envelope { term: usize, x: f64 },

    /// The value surface lost strict concavity in wealth, so the first-order
    /// condition has no maximiser.
    #[error("non-concave value surface at t = {t}, x = {x}, y = {y}")]
    NonConcave { t: f64, x: f64, y: f64 },

    #[error("benchmark quadratic has complex roots (discriminant {discriminant})")]
    Discriminant { discriminant: f64 },

    #[error("benchmark quadratic roots {a_minus}, {a_plus} do not straddle zero")]
    RootSign { a_minus: f64, a_plus: f64 },

    #[error("path bundle is inadmissible: {violations} paths lost wealth positivity")]
    Admissibility { violations: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
