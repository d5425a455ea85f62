//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Errors carry
//! enough context to name the offending operation, file, or field — numeric
//! code that fails silently is much harder to debug than code that refuses
//! loudly.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected geometry) disagree in shape.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument is outside its documented domain (negative weight,
    /// zero temperature, mixing coefficient outside [0, 1], ...).
    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// A NaN or infinity appeared where the contract requires finite values.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A tape [`Var`](crate::numkit::Var) does not refer to a node on this
    /// tape (typically a handle leaked from a different tape).
    #[error("tape: dangling node reference {index} (tape has {len} nodes)")]
    DanglingNode { index: usize, len: usize },

    /// `backward` was asked to differentiate something that is not a scalar.
    #[error("backward: loss must be a single element, got {len}")]
    NonScalarLoss { len: usize },

    /// The memory bank cannot supply enough eligible replacement clips.
    /// Silent reuse would correlate contrastive views, so this is fatal.
    #[error("memory bank: need {needed} eligible clips, only {available} available")]
    InsufficientBank { needed: usize, available: usize },

    /// No candidate question carries an answer label different from the
    /// anchor's, so no linguistic negative can be formed.
    #[error("question pool: no candidate with a different answer label")]
    EmptyQuestionPool,

    /// A file exists but its contents violate the on-disk format.
    #[error("{file}: {detail}")]
    Format { file: String, detail: String },

    /// A file declares a format version this build does not understand.
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: String, supported: String },

    /// A stored parameter matrix does not fit the model geometry it is being
    /// loaded into.
    #[error("checkpoint: dimension mismatch on `{field}`: stored {got}, expected {expected}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        got: usize,
    },

    /// Training produced a non-finite loss; the batch index points at the
    /// offending step.
    #[error("loss is not finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArg {
            op,
            detail: detail.into(),
        }
    }
}
