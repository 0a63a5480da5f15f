use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown scheme `{name}`; registered schemes: {available}")]
    UnknownScheme { name: String, available: String },

    #[error("malformed scheme data at line {line}: {reason}")]
    SchemeData { line: usize, reason: String },

    #[error("invalid Butcher tableau `{name}`: {reason}")]
    InvalidTableau { name: String, reason: String },

    #[error("stability function has a pole at z = {re} + {im}i")]
    StabilityPole { re: f64, im: f64 },

    #[error("stage system {stage} is singular to working precision")]
    SingularStage { stage: usize },

    #[error("invalid grid size {size}: {reason}")]
    InvalidGrid { size: usize, reason: String },

    #[error("problem kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid time layout: {0}")]
    TimeLayout(String),

    /// `Phi^k - Psi` (or its FCF variant) is singular on some block, so the
    /// closed-form norm identity does not apply.
    #[error("coarse block {block} of Phi-product minus Psi is singular")]
    SingularDifference { block: usize },

    #[error("matrix `{what}` is singular to working precision")]
    Singular { what: String },

    #[error("resolvent I - exp(ix) Psi is singular at x = {x}")]
    SingularResolvent { x: f64 },

    #[error("dense oracle limited to dimension {limit}, requested {requested}")]
    SizeGuard { limit: usize, requested: usize },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
