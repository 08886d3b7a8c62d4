use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("subject {subject_id}: {reason}")]
    Subject { subject_id: String, reason: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("Nyquist violation: high cutoff {high_hz} Hz must be below fs/2 = {nyquist} Hz")]
    Nyquist { high_hz: f64, nyquist: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn subject(subject_id: &str, reason: impl Into<String>) -> Self {
        Error::Subject {
            subject_id: subject_id.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
