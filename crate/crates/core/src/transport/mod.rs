//! Request/response channels between a client connection and the server.

mod codec;
mod tcp;

use std::sync::Arc;

use thiserror::Error;

pub use codec::{decode_request, decode_response, encode_request, encode_response, DecodeError};
pub use tcp::{ServeOutcome, TcpChannel, TcpServer, TcpServerHandle};

use crate::server::Server;
use crate::trace::ConnId;
use crate::types::{Key, Timestamp, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Start,
    Read { key: Key, ts: Timestamp },
    /// Immediate write propagation, accepted only by read-uncommitted servers.
    WriteRu { key: Key, value: Value },
    Commit { ts: Timestamp, writes: Vec<(Key, Value)> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    StartTs(Timestamp),
    ReadResult(Option<Value>),
    Ack,
    CommitResult(bool),
    Error { code: ErrorCode, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    /// The engine does not implement this request.
    Unsupported,
    /// The start timestamp does not name this connection's open transaction.
    UnknownTxn,
    /// The request is well-formed but breaks the protocol.
    Protocol,
    /// The request line could not be decoded.
    Decode,
    /// The server's debug model detected an invariant violation.
    ModelInvariant,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::Unsupported,
        ErrorCode::UnknownTxn,
        ErrorCode::Protocol,
        ErrorCode::Decode,
        ErrorCode::ModelInvariant,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Unsupported => "unsupported",
            ErrorCode::UnknownTxn => "unknown_txn",
            ErrorCode::Protocol => "protocol",
            ErrorCode::Decode => "decode",
            ErrorCode::ModelInvariant => "model_invariant",
            ErrorCode::Internal => "internal",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Failures of the channel itself, as opposed to error responses.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("channel closed")]
    Closed,
    #[error("malformed response: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A reliable, in-order request/response channel owned by one connection.
pub trait Channel {
    fn call(&mut self, request: &Request) -> Result<Response, TransportError>;
    /// The server-side identity of this channel.
    fn conn_id(&self) -> ConnId;
    fn close(&mut self);
}

/// Calls the server's handler directly on the caller's thread.
#[derive(Debug, Clone)]
pub struct InProcessChannel {
    server: Arc<Server>,
    conn: ConnId,
    open: bool,
}

impl InProcessChannel {
    pub fn open(server: &Arc<Server>) -> Self {
        InProcessChannel { server: Arc::clone(server), conn: server.register_conn(), open: true }
    }

    pub fn server(&self) -> &Arc<Server> {
        &self.server
    }
}

impl Channel for InProcessChannel {
    fn call(&mut self, request: &Request) -> Result<Response, TransportError> {
        if !self.open {
            return Err(TransportError::Closed);
        }
        Ok(self.server.handle(self.conn, request))
    }

    fn conn_id(&self) -> ConnId {
        self.conn
    }

    fn close(&mut self) {
        self.open = false;
    }
}
