use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the simulator core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes do not line up.
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// A NaN or infinity appeared.
    NonFinite { op: String },
    /// A tape was replayed against a network it was not recorded on.
    TapeMismatch,
    LabelOutOfRange { label: usize, classes: usize },
    /// A model cannot be built for this input size.
    InputTooSmall { height: usize, width: usize, min: usize },
    /// Too many parameters for exhaustive finite differences.
    TooLarge { params: usize, limit: usize },
    /// An argument violates a stated constraint.
    Invalid(String),
    /// Binary decoding failed.
    Format(String),
    /// Partitioning could not satisfy its constraints.
    Partition(String),
    /// A required collection was empty.
    Empty(&'static str),
    /// Wraps an error with round/client/batch context.
    Context { context: String, source: Box<Error> },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn non_finite(op: impl Into<String>) -> Self {
        Error::NonFinite { op: op.into() }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                op,
                expected,
                found,
            } => write!(f, "{op}: shape mismatch, expected {expected:?}, found {found:?}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::TapeMismatch => f.write_str("tape does not match the network state"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::InputTooSmall { height, width, min } => {
                write!(f, "input {height}x{width} too small, need at least {min}x{min}")
            }
            Error::TooLarge { params, limit } => {
                write!(f, "network has {params} parameters, limit is {limit}")
            }
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Partition(msg) => write!(f, "partition error: {msg}"),
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::Context { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Context { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
