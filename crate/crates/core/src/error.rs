use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    /// A line of a text file (dataset or FIB snapshot) could not be parsed.
    /// `line` is 1-based.
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid name {name:?}: {reason}")]
    InvalidName { name: String, reason: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("namespace too small: produced {produced} of {requested} distinct names")]
    NamespaceExhausted { requested: usize, produced: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("file truncated at offset {offset}: needed {needed} more bytes for {what}")]
    Truncated {
        offset: usize,
        needed: usize,
        what: &'static str,
    },

    #[error("malformed file at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("part {part} is full ({capacity} entries)")]
    PartFull { part: usize, capacity: usize },

    #[error("false-positive target {target} not reached within {cap} slots")]
    TargetUnreachable { target: f64, cap: usize },
}
