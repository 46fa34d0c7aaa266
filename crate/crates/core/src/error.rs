use std::fmt;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's contract (dimension mismatch, invalid config).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid data handed to an operation (NaN, empty input, degenerate columns).
    #[error("invalid input: {0}")]
    Input(String),
    /// An internal invariant failed. Indicates a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

/// Non-fatal conditions reported alongside a result.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Warning {
    /// Iterative fit stopped at its iteration cap; the best iterate was returned.
    NotConverged { iterations: usize },
    /// A covariance Cholesky diagonal hit the configured floor.
    CovarianceFloored { component: usize },
    /// All points coincide, so the neighbour radius collapsed to zero.
    DegenerateRadius,
    /// No component reached the minimum cluster size; the largest was used as anchor.
    NoLargeComponent { largest: usize },
    /// No point exceeded the density threshold.
    NoCorePoints,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NotConverged { iterations } => {
                write!(f, "fit did not converge after {iterations} iterations")
            }
            Warning::CovarianceFloored { component } => {
                write!(f, "covariance of component {component} floored")
            }
            Warning::DegenerateRadius => write!(f, "all points identical, radius is zero"),
            Warning::NoLargeComponent { largest } => write!(
                f,
                "no component reached the minimum size; largest ({largest} points) used as anchor"
            ),
            Warning::NoCorePoints => write!(f, "no point exceeds the density threshold"),
        }
    }
}

/// A value together with any warnings raised while computing it.
#[derive(Debug, Clone)]
pub struct Flagged<T> {
    pub value: T,
    pub warnings: Vec<Warning>,
}

impl<T> Flagged<T> {
    pub fn clean(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}
