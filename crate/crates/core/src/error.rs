use alloc::string::String;
use core::fmt;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit together.
    Dimension {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    /// An API precondition was violated by the caller.
    Contract(String),
    /// Invalid network, block, or training configuration.
    Config(String),
    /// Bad input data (unknown label, undecodable image, ...).
    Data(String),
    /// A loss evaluated to NaN or infinity.
    NonFinite { epoch: usize, batch: usize, value: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs} and {rhs}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::NonFinite { epoch, batch, value } => write!(
                f,
                "non-finite loss {value} at epoch {epoch}, batch index {batch}"
            ),
        }
    }
}

impl core::error::Error for Error {}
