//! An in-memory transactional key-value store with snapshot-isolation,
//! read-committed and read-uncommitted engines, trace checkers for each
//! level, and a deterministic interleaving explorer for litmus programs.

pub mod checker;
pub mod client;
pub mod error;
pub mod harness;
pub mod mvcc;
pub mod server;
pub mod trace;
pub mod transport;
pub mod types;
pub mod verdict;

pub use error::CoreError;
pub use server::{Server, ServerConfig};
pub use trace::{Trace, TraceEvent};
pub use types::{EngineKind, Key, KeyHistory, Store, Timestamp, Value, Version, WriteSet};
pub use verdict::Verdict;
