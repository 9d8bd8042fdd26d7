use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for `{tensor}`: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty prefix: no clicks observed for user {user} up to stage {stage}")]
    EmptyPrefix { user: usize, stage: usize },

    #[error("empty {0}")]
    EmptyInput(&'static str),

    #[error("empty stage sequence")]
    EmptySequence,

    #[error("interaction log is empty")]
    EmptyLog,

    #[error("window length must be positive")]
    InvalidWindow,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(
        "only {found} stage(s) after partitioning; a chronological split needs at least {required} \
         (use a smaller window or more data)"
    )]
    TooFewStages { found: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown ablation `{0}` (expected one of full, no_lpm, no_ste, no_lra, no_gpm)")]
    UnknownAblation(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss while probing `{param}`[{index}]")]
    NonFiniteProbe { param: String, index: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn mismatch(tensor: &str, expected: &[usize], found: &[usize]) -> Error {
    Error::DimensionMismatch {
        tensor: tensor.into(),
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}
