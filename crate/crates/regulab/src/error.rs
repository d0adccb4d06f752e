//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` names the offending
    /// entry so CLI users can locate it in their config file.
    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    /// The deterministic latent map failed at a sampled point.
    #[error("latent evaluation failed at x={x:?}, r={r:?}: {message}")]
    LatentEval {
        x: Vec<f64>,
        r: Vec<f64>,
        message: String,
    },

    /// A task value escaped its declared essential-supremum bound.
    #[error("task `{task}` produced {value} which exceeds the declared bound {bound}")]
    BoundViolation {
        task: String,
        value: f64,
        bound: f64,
    },

    /// Conditional-CDF fitting found a conditioning cell with no data.
    #[error("empty conditioning bin while fitting component {component}: {cell}")]
    EmptyBin { component: usize, cell: String },

    /// Non-finite input where finite reals are required.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Two binned laws were combined despite different binnings.
    #[error("binning mismatch: {0}")]
    BinMismatch(String),

    #[error("operation requires a non-empty law")]
    EmptyLaw,

    /// An exact preference tie was drawn; the caller should resample.
    #[error("degenerate draw: preference tie between agents {a} and {b}")]
    DegenerateDraw { a: usize, b: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
