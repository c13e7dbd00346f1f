use std::fmt;

use thiserror::Error;

/// A single failed invariant found by [`crate::game::validate_game`].
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Violation {
    /// Index path of the offending entry, e.g. `transition[1][0][1]`.
    pub path: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {}", join_violations(.0))]
    InvalidGame(Vec<Violation>),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular linear system while {0}")]
    Singular(&'static str),

    #[error("grid of {count} policies exceeds the enumeration cap of {cap}")]
    EnumerationCap { count: u128, cap: u128 },

    /// A runtime check of a solver invariant failed. This indicates a bug.
    #[error("internal invariant breached: {0}")]
    InvariantBreach(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than solver bugs.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::InvariantBreach(_) | Error::Singular(_))
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
