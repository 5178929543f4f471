use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the denoising pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("sequence has {found} frames, at least {required} are needed")]
    TooShort { required: usize, found: usize },

    #[error("frame of {frame:?} is smaller than a {patch}x{patch} patch")]
    PatchTooLarge { frame: (usize, usize), patch: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("malformed PGM {path}: {reason}")]
    MalformedPgm { path: PathBuf, reason: String },

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("malformed checkpoint {path}: {reason}")]
    MalformedCheckpoint { path: PathBuf, reason: String },

    #[error("architecture hash mismatch: checkpoint has {found}, model expects {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("mode `{mode}` requires a {what} checkpoint")]
    MissingCheckpoint { mode: String, what: String },

    #[error("flow field contains non-finite values")]
    NonFiniteFlow,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("parameters are frozen")]
    Frozen,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
