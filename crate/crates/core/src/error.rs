use thiserror::Error;

use crate::types::{Key, Timestamp};

/// Errors raised by the pure transaction logic and domain-type constructors.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("timestamps must be positive")]
    InvalidTimestamp,
    #[error("unknown isolation level {0:?}")]
    UnknownLevel(String),
    /// A version carries the very timestamp a snapshot was taken at. Start and
    /// commit timestamps come from one counter, so this means a corrupted history.
    #[error("protocol violation: a version was committed at start timestamp {ts}")]
    TimestampCollision { ts: Timestamp },
    #[error("contract violation: key {0} missing from a history map")]
    MissingKey(Key),
    #[error("contract violation: {0}")]
    Contract(String),
}
