use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal of {len} samples is shorter than one {win_len}-sample window")]
    SignalTooShort { len: usize, win_len: usize },

    #[error("shape mismatch in {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("tape does not match layer: {0}")]
    TapeMismatch(String),

    #[error("exit {exit} is not available for variant {variant} (exits: {available:?})")]
    InvalidExit {
        exit: usize,
        variant: String,
        available: Vec<usize>,
    },

    #[error("silent signal: {0}")]
    SilentSignal(String),

    #[error("unknown noise kind `{0}` (expected white, pink, babble or hum)")]
    UnknownNoiseKind(String),

    #[error("unsupported WAV {field}: {value} (expected {expected})")]
    UnsupportedWav {
        field: &'static str,
        value: String,
        expected: &'static str,
    },

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("variant {0} requires a baseline checkpoint (config key `baseline_checkpoint`)")]
    MissingBaselineCheckpoint(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            what,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
