use std::fmt;
use std::io;

/// Errors produced anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, empty input...).
    InvalidArgument(String),
    /// An operation was called in a state it does not support, e.g. backward
    /// without a forward cache.
    Precondition(String),
    CorruptCheckpoint(String),
    CorruptBitstream(String),
    /// The Bjontegaard fit could not be computed.
    Fit(String),
    /// Training produced a non-finite loss.
    Diverged { iteration: u64, loss: f64 },
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::CorruptCheckpoint(msg) => write!(f, "corrupt checkpoint: {msg}"),
            Error::CorruptBitstream(msg) => write!(f, "corrupt bitstream: {msg}"),
            Error::Fit(msg) => write!(f, "fit error: {msg}"),
            Error::Diverged { iteration, loss } => {
                write!(f, "training diverged at iteration {iteration} (loss {loss})")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
