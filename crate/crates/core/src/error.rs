use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// The density has no finite value at this point (e.g. VG at X = M with small γ).
    #[error("density singularity: {0}")]
    DensitySingularity(String),

    /// The conditional law of W is not a proper GIG (a or b is zero).
    #[error("degenerate conditional: {0}")]
    DegenerateConditional(String),

    /// Stage-1 location/skewness denominator vanished.
    #[error("degenerate weights for component {component}")]
    DegenerateWeights { component: usize },

    #[error("empty component {component} (N_g = {size:.3})")]
    EmptyComponent { component: usize, size: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit failed: all {starts} starts failed: {diagnostics:?}")]
    FitFailed {
        starts: usize,
        diagnostics: Vec<String>,
    },

    #[error("selection failed: {0:?}")]
    SelectionFailed(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
