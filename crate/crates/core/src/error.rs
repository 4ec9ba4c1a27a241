use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that had to agree did not.
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    /// An operator or model configuration is inconsistent.
    Config(String),
    /// Input data is unusable (non-finite offsets, out-of-range pixels, ...).
    Input(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl fmt::Debug, actual: impl fmt::Debug) -> Self {
        Error::Shape {
            op,
            expected: alloc::format!("{expected:?}"),
            actual: alloc::format!("{actual:?}"),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, expected, actual } => {
                write!(f, "{op}: shape mismatch, expected {expected}, got {actual}")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
