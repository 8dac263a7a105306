use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A record or row failed validation. `line` is 1-based when known.
    InvalidRecord { line: Option<usize>, reason: String },
    /// Two records share the same (student, exercise, timestamp) triple.
    DuplicateRecord { student: String, exercise: String, timestamp: i64 },
    UnknownStudent(String),
    UnknownExercise(String),
    UnknownSkill(String),
    UnknownNode(String),
    /// An exercise without any skill in the Q-matrix.
    ExerciseWithoutSkill(String),
    InvalidEdge { from: String, to: String, reason: String },
    UnknownRelationKind(String),
    EmptyInput(&'static str),
    InvalidArgument(String),
    DimensionMismatch { context: &'static str, expected: (usize, usize), found: (usize, usize) },
    NonFinite { context: String },
    ZeroNorm(String),
    Divergence { epoch: usize },
    InsufficientRecords { student: String, needed: usize, found: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidRecord { line: Some(line), reason } => write!(f, "line {line}: {reason}"),
            Error::InvalidRecord { line: None, reason } => write!(f, "invalid record: {reason}"),
            Error::DuplicateRecord { student, exercise, timestamp } => write!(
                f,
                "ambiguous duplicate record (student {student}, exercise {exercise}, timestamp {timestamp})"
            ),
            Error::UnknownStudent(id) => write!(f, "unknown student {id}"),
            Error::UnknownExercise(id) => write!(f, "unknown exercise {id}"),
            Error::UnknownSkill(id) => write!(f, "unknown skill {id}"),
            Error::UnknownNode(id) => write!(f, "unknown learning object {id}"),
            Error::ExerciseWithoutSkill(id) => write!(f, "exercise with no skill: {id}"),
            Error::InvalidEdge { from, to, reason } => write!(f, "invalid edge {from} -> {to}: {reason}"),
            Error::UnknownRelationKind(kind) => write!(f, "unknown relation kind {kind}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch { context, expected, found } => write!(
                f,
                "{context}: dimension mismatch, expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::ZeroNorm(id) => write!(f, "zero-norm embedding for {id}"),
            Error::Divergence { epoch } => write!(f, "training diverged (non-finite loss) at epoch {epoch}"),
            Error::InsufficientRecords { student, needed, found } => write!(
                f,
                "student {student} has {found} usable records, {needed} required"
            ),
        }
    }
}

impl core::error::Error for Error {}
