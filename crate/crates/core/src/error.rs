use std::io;

use thiserror::Error;

/// Errors produced by the conversion toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("not enough voiced frames: need at least {needed}, found {found}")]
    NotEnoughVoiced { needed: usize, found: usize },

    #[error("domain code {code} out of range 1..={n_domains}")]
    DomainOutOfRange { code: usize, n_domains: usize },

    #[error("sequence of {len} frames is shorter than required {required}")]
    TooShort { len: usize, required: usize },

    #[error("sequence length {len} is not a multiple of {multiple}; pad the input first")]
    NotDivisible { len: usize, multiple: usize },

    #[error("conditioning does not match the model variant: {0}")]
    VariantMismatch(String),

    #[error("bad magic in feature file")]
    BadMagic,

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("non-finite value in payload at {0}")]
    NonFinite(String),

    #[error("bad manifest: {0}")]
    BadManifest(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("non-finite loss at iteration {iteration}: {snapshot}")]
    NumericalAbort { iteration: u64, snapshot: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
