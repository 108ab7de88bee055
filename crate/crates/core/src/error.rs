//! Error type shared across the crate.

use std::path::PathBuf;

/// Anything that can go wrong while building pools, collaborating, training,
/// or persisting runs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation received an empty input where at least one element is
    /// required (empty prompt, empty pool, empty score list, ...).
    #[error("empty {0}")]
    Empty(&'static str),

    /// A character outside the fixed vocabulary was encountered while
    /// encoding text.
    #[error("character {0:?} is not in the vocabulary")]
    UnknownSymbol(char),

    /// A token id at or beyond the vocabulary size.
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    /// Unknown task family name in a config or TSV file.
    #[error("unknown task family {0:?}")]
    UnknownFamily(String),

    /// A flat parameter vector whose length does not match the model config.
    #[error("parameter vector has {got} entries, config requires {expected}")]
    ParamLength { expected: usize, got: usize },

    /// Models (or their configs) that cannot be combined by the requested
    /// operation, e.g. weight-merging models of different shapes.
    #[error("incompatible models: {0}")]
    Incompatible(String),

    /// A NaN or infinity surfaced where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An invalid run configuration, with the offending field spelled out.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("bad checkpoint magic in {path}")]
    BadMagic { path: PathBuf },

    /// Checkpoint payload has the wrong number of bytes for its metadata.
    #[error("checkpoint payload length mismatch in {path}: expected {expected} bytes, got {got}")]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    /// A structured file (TSV dataset, checkpoint metadata, run state) that
    /// failed to parse.
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    /// The run directory is locked by another live process.
    #[error("run directory {0} is locked (remove the .lock file if the owning process is gone)")]
    RunLocked(PathBuf),

    /// Nothing to resume from, or the run directory layout is broken.
    #[error("cannot resume from {dir}: {reason}")]
    CannotResume { dir: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
