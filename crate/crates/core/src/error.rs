use thiserror::Error;

use crate::types::ProcessId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Structural and protocol-logic failures. Anything reaching this type is a
/// bug in a scenario or in the protocol, never an expected runtime outcome.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("bit vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("bit index {index} out of range for vector of length {len}")]
    BitOutOfRange { index: usize, len: usize },
    #[error("cannot halve a zero weight")]
    HalveZero,
    #[error("weight denominator exceeds 2^{max}")]
    DenominatorOverflow { max: u32 },
    #[error("accumulated weight exceeds 1")]
    WeightExceedsOne,
    #[error("process {0} is not known to this support station")]
    UnknownProcess(ProcessId),
    #[error("process {0} is not disconnected")]
    NotDisconnected(ProcessId),
    #[error("initiator state already decided")]
    AlreadyDecided,
    #[error("{0}")]
    Protocol(String),
}
