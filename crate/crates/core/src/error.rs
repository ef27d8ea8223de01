use thiserror::Error;

pub type Result<T> = std::result::Result<T, WtError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WtError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constructed object would violate one of its invariants.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("quadrature did not converge: {what} (estimate {estimate:e}, error {error:e})")]
    Quadrature {
        what: String,
        estimate: f64,
        error: f64,
    },

    #[error("root finder did not converge: {0}")]
    RootFinding(String),

    /// The adaptive integrator could not make progress.
    #[error("step size underflow at t = {t:e} (h = {h:e}): {reason}")]
    StepUnderflow { t: f64, h: f64, reason: String },

    #[error("node {index} (k = {k:e}): {source}")]
    AtNode {
        index: usize,
        k: f64,
        #[source]
        source: Box<WtError>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl WtError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        WtError::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        WtError::InvalidState(msg.into())
    }

    pub(crate) fn at_node(self, index: usize, k: f64) -> Self {
        WtError::AtNode {
            index,
            k,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for WtError {
    fn from(e: std::io::Error) -> Self {
        WtError::Io(e.to_string())
    }
}
