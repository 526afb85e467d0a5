use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible; both shapes are rendered into the message.
    #[error("{op}: shape mismatch: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("{op}: invalid shape {shape}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: String,
        reason: &'static str,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("growth error: {0}")]
    Growth(String),
    #[error("level {level} out of range (top grown level is {top:?})")]
    LevelOutOfRange { level: usize, top: Option<usize> },
    #[error("topology mismatch: {0}")]
    Topology(String),
    #[error("non-finite loss {value} at level {level}, epoch {epoch}; the learning rate is probably too high")]
    NonFinite { level: usize, epoch: usize, value: f64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl core::fmt::Display, right: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
