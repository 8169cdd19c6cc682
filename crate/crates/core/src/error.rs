//! Crate-wide error type with process exit-code mapping.

use thiserror::Error;

/// One rejected configuration field with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldViolation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Config rejected; every violated field is listed.
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<FieldViolation>),

    #[error("could not parse configuration: {0}")]
    ConfigParse(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    InvalidToken { id: usize, vocab: usize },

    #[error("context row {row} out of range for table with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("distribution length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// KL(p || q) with q below the support floor where p carries mass.
    #[error("divergence undefined: q[{index}] below floor where p[{index}] = {p_mass}")]
    DivergenceUndefined { index: usize, p_mass: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid selection score {value} at batch index {index}; scores must be finite and nonnegative")]
    InvalidScore { index: usize, value: f64 },

    #[error("batch tagged {found:?} fed to a {expected:?} step")]
    BranchMismatch {
        expected: crate::context::Branch,
        found: crate::context::Branch,
    },

    /// A rollout from older student parameters reached a fresh-only code path.
    #[error("stale rollout: generated at student version {rollout_version}, student is at {student_version}")]
    StaleRollout {
        rollout_version: u64,
        student_version: u64,
    },

    #[error(
        "specialization failed: general KL reached {achieved:.4} of target {target:.4} after {steps} steps"
    )]
    SpecializationFailed {
        achieved: f64,
        target: f64,
        steps: u64,
    },

    #[error("policy shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("metrics parse error at line {line}: {message}")]
    MetricsParse { line: usize, message: String },

    #[error("output path {0} already has run artifacts; pass --force to overwrite")]
    OutputExists(String),

    #[error("self-check failed: {0}")]
    CheckFailed(String),

    #[error("{0}")]
    Runtime(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Process exit code contract: 1 validation, 2 runtime, 3 failed self-check.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_) | Error::ConfigParse(_) | Error::OutputExists(_) => 1,
            Error::CheckFailed(_) => 3,
            _ => 2,
        }
    }
}
