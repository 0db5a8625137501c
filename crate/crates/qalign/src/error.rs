//! Crate-wide error type.

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands have incompatible shapes; both shapes are named.
    #[error("{op}: shape mismatch: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// An operation received an empty input it cannot define a result for.
    #[error("{op}: empty input")]
    Empty { op: &'static str },

    /// A value is outside the operation's domain (non-finite, negative
    /// where a magnitude is required, zero batch size, ...).
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// An operand carries the wrong quantization scheme for this kernel.
    #[error("{op}: scheme mismatch: {msg}")]
    Scheme { op: &'static str, msg: String },

    /// Model quantization was asked for a layer with no calibration stats.
    #[error("no calibration stats for layer `{layer}`")]
    MissingCalibration { layer: String },

    /// A token id falls outside the model's vocabulary.
    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: u32, vocab: u32 },

    /// A ranked query cannot be scored without relevant items.
    #[error("query `{query}`: relevant set is empty")]
    EmptyRelevantSet { query: String },

    /// Rank correlation is undefined (constant input).
    #[error("correlation undefined: {msg}")]
    UndefinedCorrelation { msg: String },

    /// A timed workload failed; the run index is preserved.
    #[error("workload run {run} failed: {source}")]
    Workload {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    /// The binary tensor container is malformed.
    #[error("container: {msg}")]
    Container { msg: String },

    /// A text input file could not be parsed.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: impl Into<String>, rhs: impl Into<String>) -> Self {
        Error::Shape {
            op,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}
