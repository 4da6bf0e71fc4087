//! Client proxy: one connection, at most one open transaction, and a local
//! cache of the open transaction's writes.

use std::net::ToSocketAddrs;

use thiserror::Error;

use crate::trace::{EventKind, Recorder, TraceError};
use crate::transport::{Channel, ErrorCode, Request, Response, TcpChannel, TransportError};
use crate::types::{EngineKind, Key, Timestamp, Value, WriteSet};

#[derive(Debug, Error)]
pub enum ClientError {
    /// The operation is not valid in the connection's current state.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("server error [{code}]: {message}")]
    Server { code: ErrorCode, message: String },
    #[error("unexpected response {0:?}")]
    UnexpectedResponse(Box<Response>),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxnState {
    Inactive,
    Active { start_ts: Timestamp, cache: WriteSet },
}

#[derive(Debug)]
pub struct Connection<C: Channel> {
    channel: C,
    engine: EngineKind,
    state: TxnState,
    /// Transactions begun on this connection.
    begun: u64,
    recorder: Option<Recorder>,
}

impl Connection<TcpChannel> {
    /// Connects over TCP. Retries forever unless `max_attempts` is given.
    pub fn connect(addr: impl ToSocketAddrs + Clone, engine: EngineKind, max_attempts: Option<u32>) -> Result<Self, ClientError> {
        match TcpChannel::connect(addr, max_attempts) {
            Ok(ch) => Ok(Connection::new(ch, engine)),
            Err(e) if e.kind() == std::io::ErrorKind::TimedOut => Err(ClientError::Timeout(e.to_string())),
            Err(e) => Err(TransportError::Io(e).into()),
        }
    }
}

impl<C: Channel> Connection<C> {
    pub fn new(channel: C, engine: EngineKind) -> Self {
        Connection { channel, engine, state: TxnState::Inactive, begun: 0, recorder: None }
    }

    /// Records client-local events (cache writes and cache hits) into `recorder`.
    pub fn with_recorder(mut self, recorder: Recorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn engine(&self) -> EngineKind {
        self.engine
    }

    pub fn state(&self) -> &TxnState {
        &self.state
    }

    pub fn is_active(&self) -> bool {
        matches!(self.state, TxnState::Active { .. })
    }

    pub fn channel(&self) -> &C {
        &self.channel
    }

    pub fn close(&mut self) {
        self.channel.close();
    }

    fn call(&mut self, req: &Request) -> Result<Response, ClientError> {
        match self.channel.call(req)? {
            Response::Error { code, message } => Err(ClientError::Server { code, message }),
            r => Ok(r),
        }
    }

    fn record_local(&self, kind: EventKind) -> Result<(), ClientError> {
        if let Some(r) = &self.recorder {
            r.record_local(self.channel.conn_id(), self.begun - 1, kind)?;
        }
        Ok(())
    }

    fn active(&mut self, op: &str) -> Result<(Timestamp, &mut WriteSet), ClientError> {
        match &mut self.state {
            TxnState::Active { start_ts, cache } => Ok((*start_ts, cache)),
            TxnState::Inactive => Err(ClientError::Usage(format!("{op} without an active transaction"))),
        }
    }

    pub fn txn_start(&mut self) -> Result<Timestamp, ClientError> {
        if self.is_active() {
            return Err(ClientError::Usage("start while a transaction is active".into()));
        }
        match self.call(&Request::Start)? {
            Response::StartTs(ts) => {
                self.begun += 1;
                self.state = TxnState::Active { start_ts: ts, cache: WriteSet::new() };
                Ok(ts)
            }
            other => Err(ClientError::UnexpectedResponse(Box::new(other))),
        }
    }

    pub fn txn_write(&mut self, key: Key, value: Value) -> Result<(), ClientError> {
        let (_, cache) = self.active("write")?;
        cache.write(key.clone(), value.clone());
        self.record_local(EventKind::LocalWrite { key: key.clone(), val: value.clone() })?;
        if self.engine == EngineKind::Ru {
            match self.call(&Request::WriteRu { key, value })? {
                Response::Ack => {}
                other => return Err(ClientError::UnexpectedResponse(Box::new(other))),
            }
        }
        Ok(())
    }

    pub fn txn_read(&mut self, key: &Key) -> Result<Option<Value>, ClientError> {
        let (ts, cache) = self.active("read")?;
        if let Some(entry) = cache.get(key.as_str()) {
            let v = entry.value.clone();
            self.record_local(EventKind::Read { key: key.clone(), val: Some(v.clone()) })?;
            return Ok(Some(v));
        }
        match self.call(&Request::Read { key: key.clone(), ts })? {
            Response::ReadResult(v) => Ok(v),
            other => Err(ClientError::UnexpectedResponse(Box::new(other))),
        }
    }

    /// Sends the cached writes. The connection is inactive afterwards
    /// whatever the outcome.
    pub fn txn_commit(&mut self) -> Result<bool, ClientError> {
        let (ts, cache) = self.active("commit")?;
        let writes = cache.to_pairs();
        self.state = TxnState::Inactive;
        match self.call(&Request::Commit { ts, writes })? {
            Response::CommitResult(ok) => Ok(ok),
            other => Err(ClientError::UnexpectedResponse(Box::new(other))),
        }
    }

    /// Forgets the open transaction without committing. The server keeps
    /// its start timestamp until the next start on this connection.
    pub fn abandon(&mut self) {
        self.state = TxnState::Inactive;
    }

    /// One round of [`Connection::wait`]: start, read, commit. Returns
    /// whether the value read satisfied `pred`.
    pub fn wait_round(&mut self, key: &Key, pred: impl Fn(&Value) -> bool) -> Result<bool, ClientError> {
        if self.is_active() {
            return Err(ClientError::Usage("wait while a transaction is active".into()));
        }
        self.txn_start()?;
        let seen = self.txn_read(key)?;
        self.txn_commit()?;
        Ok(seen.as_ref().is_some_and(&pred))
    }

    /// Repeats fresh read-only transactions until one reads a value
    /// satisfying `pred`. May not return.
    pub fn wait(&mut self, key: &Key, pred: impl Fn(&Value) -> bool) -> Result<(), ClientError> {
        while !self.wait_round(key, &pred)? {}
        Ok(())
    }

    /// [`Connection::wait`] giving up after `max_rounds` rounds. Returns the
    /// number of rounds taken.
    pub fn wait_bounded(&mut self, key: &Key, pred: impl Fn(&Value) -> bool, max_rounds: usize) -> Result<usize, ClientError> {
        for round in 1..=max_rounds {
            if self.wait_round(key, &pred)? {
                return Ok(round);
            }
        }
        Err(ClientError::Timeout(format!("wait on {key} unsatisfied after {max_rounds} rounds")))
    }

    /// Starts the single transaction of a weak wait. Snapshot-isolation
    /// connections can never observe new data inside one transaction.
    pub fn weak_wait_begin(&mut self) -> Result<(), ClientError> {
        if self.engine == EngineKind::Si {
            return Err(ClientError::Usage("weak wait on a snapshot-isolation connection".into()));
        }
        if self.is_active() {
            return Err(ClientError::Usage("weak wait while a transaction is active".into()));
        }
        self.txn_start()?;
        Ok(())
    }

    /// One read of a weak wait; commits and returns true once `pred` holds.
    pub fn weak_wait_poll(&mut self, key: &Key, pred: impl Fn(&Value) -> bool) -> Result<bool, ClientError> {
        let seen = self.txn_read(key)?;
        if seen.as_ref().is_some_and(pred) {
            self.txn_commit()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Re-reads inside one transaction until `pred` holds, then commits.
    pub fn weak_wait(&mut self, key: &Key, pred: impl Fn(&Value) -> bool) -> Result<(), ClientError> {
        self.weak_wait_begin()?;
        while !self.weak_wait_poll(key, &pred)? {}
        Ok(())
    }

    pub fn weak_wait_bounded(&mut self, key: &Key, pred: impl Fn(&Value) -> bool, max_reads: usize) -> Result<usize, ClientError> {
        self.weak_wait_begin()?;
        for n in 1..=max_reads {
            if self.weak_wait_poll(key, &pred)? {
                return Ok(n);
            }
        }
        self.abandon();
        Err(ClientError::Timeout(format!("weak wait on {key} unsatisfied after {max_reads} reads")))
    }

    /// Start, run `body`, commit. If `body` fails the transaction is
    /// abandoned and the error returned.
    pub fn run<E>(&mut self, body: impl FnOnce(&mut Self) -> Result<(), E>) -> Result<bool, E>
    where
        E: From<ClientError>,
    {
        self.txn_start()?;
        if let Err(e) = body(self) {
            self.abandon();
            return Err(e);
        }
        Ok(self.txn_commit()?)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::server::{Server, ServerConfig};
    use crate::transport::InProcessChannel;
    use crate::types::{key, val};

    fn setup(kind: EngineKind) -> (Arc<Server>, impl FnMut() -> Connection<InProcessChannel>) {
        let server = Arc::new(Server::new(kind, &[key("x")], ServerConfig { debug_model: true, max_snapshots: None }));
        let s = Arc::clone(&server);
        (server, move || Connection::new(InProcessChannel::open(&s), kind))
    }

    #[test]
    fn state_machine() {
        let (_s, mut conn) = setup(EngineKind::Si);
        let mut c = conn();
        assert!(matches!(c.txn_write(key("x"), val("1")), Err(ClientError::Usage(_))));
        assert!(matches!(c.txn_commit(), Err(ClientError::Usage(_))));
        assert_eq!(c.txn_start().unwrap(), Timestamp::new(1).unwrap());
        assert!(matches!(c.txn_start(), Err(ClientError::Usage(_))));
        c.txn_write(key("x"), val("1")).unwrap();
        c.txn_write(key("x"), val("2")).unwrap();
        assert_eq!(c.txn_read(&key("x")).unwrap(), Some(val("2")));
        assert!(c.txn_commit().unwrap());
        assert!(!c.is_active());
    }

    #[test]
    fn conflicting_commit_leaves_connection_inactive() {
        let (_s, mut conn) = setup(EngineKind::Si);
        let (mut a, mut b) = (conn(), conn());
        a.txn_start().unwrap();
        b.txn_start().unwrap();
        b.txn_write(key("x"), val("b")).unwrap();
        assert!(b.txn_commit().unwrap());
        a.txn_write(key("x"), val("a")).unwrap();
        assert!(!a.txn_commit().unwrap());
        assert!(!a.is_active());
        a.txn_start().unwrap();
        assert_eq!(a.txn_read(&key("x")).unwrap(), Some(val("b")));
    }

    #[test]
    fn ru_write_propagates_immediately() {
        let (_s, mut conn) = setup(EngineKind::Ru);
        let (mut a, mut b) = (conn(), conn());
        a.txn_start().unwrap();
        a.txn_write(key("x"), val("1")).unwrap();
        b.txn_start().unwrap();
        assert_eq!(b.txn_read(&key("x")).unwrap(), Some(val("1")));
        assert!(b.txn_commit().unwrap());
        assert!(a.txn_commit().unwrap());
    }

    #[test]
    fn wait_rounds() {
        let (_s, mut conn) = setup(EngineKind::Si);
        let (mut a, mut b) = (conn(), conn());
        assert!(matches!(a.wait_bounded(&key("x"), |v| v.as_str() == "1", 3), Err(ClientError::Timeout(_))));
        b.run(|c| c.txn_write(key("x"), val("1"))).unwrap();
        assert_eq!(a.wait_bounded(&key("x"), |v| v.as_str() == "1", 3).unwrap(), 1);
    }

    #[test]
    fn weak_wait_rules() {
        let (_s, mut conn) = setup(EngineKind::Si);
        assert!(matches!(conn().weak_wait(&key("x"), |_| true), Err(ClientError::Usage(_))));

        let (_s, mut conn) = setup(EngineKind::Rc);
        let (mut a, mut b) = (conn(), conn());
        a.weak_wait_begin().unwrap();
        assert!(!a.weak_wait_poll(&key("x"), |v| v.as_str() == "1").unwrap());
        b.run(|c| c.txn_write(key("x"), val("1"))).unwrap();
        assert!(a.weak_wait_poll(&key("x"), |v| v.as_str() == "1").unwrap());
        assert!(!a.is_active());
    }

    #[test]
    fn run_abandons_on_error() {
        let (_s, mut conn) = setup(EngineKind::Si);
        let mut c = conn();
        let out: Result<bool, ClientError> = c.run(|c| {
            c.txn_write(key("x"), val("1"))?;
            Err(ClientError::Usage("boom".into()))
        });
        assert!(out.is_err());
        assert!(!c.is_active());
        assert!(c.run::<ClientError>(|_| Ok(())).unwrap());
        c.txn_start().unwrap();
        assert_eq!(c.txn_read(&key("x")).unwrap(), None);
    }

    #[test]
    fn connect_gives_up_with_cap() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = Connection::connect(addr, EngineKind::Si, Some(3)).unwrap_err();
        assert!(matches!(err, ClientError::Timeout(_)));
    }
}
