//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("trainable parameter `{name}` has no gradient")]
    MissingGradient { name: String },

    #[error("unknown parameter `{name}`")]
    UnknownParameter { name: String },

    #[error("parameter `{name}` already registered")]
    DuplicateParameter { name: String },

    #[error("tensor with requires_grad=false cannot accumulate gradient")]
    FrozenGradient,

    #[error("token id {token} out of vocabulary (size {vocab})")]
    OutOfVocab { token: usize, vocab: usize },

    #[error("sample rate mismatch: clip is {clip} Hz, config expects {config} Hz")]
    SampleRateMismatch { clip: u32, config: u32 },

    #[error("epoch {epoch} out of range for schedule over {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("class {class} has no clips in the dataset")]
    EmptyClass { class: usize },

    #[error("language token pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("prediction/label length mismatch: {predictions} vs {labels}")]
    LengthMismatch { predictions: usize, labels: usize },

    #[error("utility score undefined for trainable count {count} (need >= 2)")]
    TrainableCountTooSmall { count: usize },

    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error("adapter site {site} out of range ({region} has {layers} layers)")]
    AdapterSiteOutOfRange {
        region: String,
        site: usize,
        layers: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("audio error: {0}")]
    Audio(String),

    #[error("dataset manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised by checkpoint save/load. Each failure mode is a distinct
/// kind so callers (and tests) can tell tampering from version skew.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },

    #[error("checkpoint blob truncated: expected {expected} bytes, found {found}")]
    TruncatedBlob { expected: usize, found: usize },

    #[error("checkpoint offset inconsistency at `{name}`: {detail}")]
    OffsetInconsistency { name: String, detail: String },

    #[error("unsupported checkpoint dtype `{dtype}`")]
    UnsupportedDtype { dtype: String },

    #[error("malformed checkpoint manifest: {0}")]
    Malformed(String),

    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
