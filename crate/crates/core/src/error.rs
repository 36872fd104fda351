use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::phases::Phase;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value breaks an invariant. `field` is a dotted path.
    Validation { field: String, message: String },
    /// An index window does not fit the sequence it addresses.
    Range { start: usize, end: usize, len: usize },
    /// A twin was asked to move backwards in time.
    Monotonicity { last_sync: u64, requested: u64 },
    /// A snapshot asked for records the twin has not mirrored yet.
    Staleness { requested_end: usize, mirrored: usize },
    /// Tensor or vector shapes disagree.
    Shape { expected: usize, found: usize, what: &'static str },
    /// Empty input where at least one element is required.
    Empty(&'static str),
    /// Non-finite input values.
    NonFinite(&'static str),
    /// Training produced non-finite values.
    Divergence { round: Option<usize> },
    /// A lifecycle phase failed.
    InPhase { phase: Phase, source: Box<Error> },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation { field, message } => write!(f, "invalid `{field}`: {message}"),
            Error::Range { start, end, len } => {
                write!(f, "window [{start}, {end}) out of bounds for length {len}")
            }
            Error::Monotonicity {
                last_sync,
                requested,
            } => write!(
                f,
                "twin synced at t={last_sync} cannot move back to t={requested}"
            ),
            Error::Staleness {
                requested_end,
                mirrored,
            } => write!(
                f,
                "snapshot up to t={requested_end} exceeds the {mirrored} mirrored records"
            ),
            Error::Shape {
                expected,
                found,
                what,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::NonFinite(what) => write!(f, "{what} contains non-finite values"),
            Error::Divergence { round: Some(q) } => {
                write!(f, "training diverged in round {q}")
            }
            Error::Divergence { round: None } => write!(f, "training diverged"),
            Error::InPhase { phase, source } => write!(f, "{phase} phase failed: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::InPhase { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
