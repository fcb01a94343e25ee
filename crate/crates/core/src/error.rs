use std::path::PathBuf;

use thiserror::Error;

use crate::plan::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Each variant maps to a stable
/// machine-readable code (see [`Error::code`]) shared by the CLI and the
/// sidecar protocol.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty file")]
    EmptyFile,

    #[error("malformed CSV at line {line}: {detail}")]
    MalformedCsv { line: usize, detail: String },

    #[error("row {row} (line {line}) has {found} cells, header has {expected}")]
    RaggedRow {
        row: usize,
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error(
        "header has {found} columns, need at least {required} (2 ids + {inputs} inputs + 1 output)"
    )]
    HeaderArity {
        found: usize,
        required: usize,
        inputs: usize,
    },

    #[error("row {row} (line {line}): {column} value {value:?} is not a non-negative integer")]
    NonIntegerId {
        row: usize,
        line: usize,
        column: String,
        value: String,
    },

    #[error("plan is not runnable: {} error(s)", .0.error_count())]
    PlanInvalid(ValidationReport),

    #[error("participant {0} has no rows in the plan")]
    UnknownParticipant(u64),

    #[error("expected {expected} output values, got {found}")]
    OutputArityMismatch { expected: usize, found: usize },

    #[error("output value for {column} is empty")]
    EmptyOutputValue { column: String },

    #[error("row index {index} out of range (plan has {len} rows)")]
    RowOutOfRange { index: usize, len: usize },

    #[error("trial {trial} does not exist for participant {participant}")]
    BadStartFrom { participant: u64, trial: u64 },

    #[error("session is finished")]
    SessionFinished,

    #[error("plan is locked by session {session_id} (pid {pid})")]
    AlreadyLocked { session_id: String, pid: u32 },

    #[error("storage failure on {}: {detail}", .path.display())]
    StorageFailure { path: PathBuf, detail: String },

    #[error("malformed journal at line {line}: {detail}")]
    MalformedJournal { line: usize, detail: String },

    #[error("invalid randomization spec: {0}")]
    SpecInvalid(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyFile => "EMPTY_FILE",
            Error::MalformedCsv { .. } => "MALFORMED_CSV",
            Error::RaggedRow { .. } => "RAGGED_ROW",
            Error::HeaderArity { .. } => "HEADER_ARITY",
            Error::NonIntegerId { .. } => "NON_INTEGER_ID",
            Error::PlanInvalid(_) => "PLAN_INVALID",
            Error::UnknownParticipant(_) => "UNKNOWN_PARTICIPANT",
            Error::OutputArityMismatch { .. } => "OUTPUT_ARITY_MISMATCH",
            Error::EmptyOutputValue { .. } => "EMPTY_OUTPUT_VALUE",
            Error::RowOutOfRange { .. } => "ROW_OUT_OF_RANGE",
            Error::BadStartFrom { .. } => "BAD_START_FROM",
            Error::SessionFinished => "SESSION_FINISHED",
            Error::AlreadyLocked { .. } => "ALREADY_LOCKED",
            Error::StorageFailure { .. } => "STORAGE_FAILURE",
            Error::MalformedJournal { .. } => "MALFORMED_JOURNAL",
            Error::SpecInvalid(_) => "SPEC_INVALID",
        }
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::StorageFailure {
            path: path.into(),
            detail: err.to_string(),
        }
    }
}
