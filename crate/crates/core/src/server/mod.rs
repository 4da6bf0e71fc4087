//! The key-value service. One lock guards all state; every handler runs to
//! completion inside it.
//!
//! Three engines share the handler interface:
//! - `Si` keeps per-key version lists, reads at the start timestamp and
//!   commits only if no written key gained a version after the start.
//! - `Rc` reads the latest committed version and always commits.
//! - `Ru` applies writes the moment they arrive; commit is a no-op.

mod model;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use thiserror::Error;

pub use model::{DebugModel, ModelViolation};

use crate::error::CoreError;
use crate::mvcc::{apply_commit_in_place, can_commit, check_key, version_lookup};
use crate::trace::{ConnId, EventKind, Recorder, TraceError};
use crate::transport::{ErrorCode, Request, Response};
use crate::types::{EngineKind, Key, KeyHistory, Store, Timestamp, Value, WriteSet};
use crate::verdict::Verdict;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerConfig {
    /// Maintain the shadow model and check it after every handler.
    pub debug_model: bool,
    /// Evict the oldest outstanding snapshots beyond this many. Abandoned
    /// transactions otherwise keep their snapshot forever.
    pub max_snapshots: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{0} is not supported by the {1} engine")]
    Unsupported(&'static str, EngineKind),
    #[error("start timestamp {0} is not the open transaction of this connection")]
    UnknownTxn(Timestamp),
    #[error("no transaction is open on this connection")]
    NoActiveTxn,
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("model invariant violated: {0}")]
    Model(ModelViolation),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl ServerError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ServerError::Unsupported(..) => ErrorCode::Unsupported,
            ServerError::UnknownTxn(_) | ServerError::NoActiveTxn => ErrorCode::UnknownTxn,
            ServerError::Core(_) => ErrorCode::Protocol,
            ServerError::Model(_) => ErrorCode::ModelInvariant,
            ServerError::Trace(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Session {
    /// Number of transactions begun so far.
    begun: u64,
    open: Option<Timestamp>,
}

impl Session {
    fn txn(&self) -> u64 {
        self.begun.saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
struct ServerState {
    time: u64,
    store: Store,
    ru_writes: BTreeMap<Key, Vec<(Value, u64)>>,
    ru_seq: u64,
    sessions: HashMap<ConnId, Session>,
    debug: Option<DebugModel>,
    violation: Option<ModelViolation>,
}

pub struct Server {
    kind: EngineKind,
    state: Mutex<ServerState>,
    recorder: Option<Recorder>,
    next_conn: AtomicU64,
}

impl std::fmt::Debug for Server {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server").field("kind", &self.kind).finish_non_exhaustive()
    }
}

impl Server {
    /// A server at time 0 whose `keys` start with empty histories.
    pub fn new(kind: EngineKind, keys: &[Key], config: ServerConfig) -> Self {
        let store: Store = keys.iter().map(|k| (k.clone(), KeyHistory::empty())).collect();
        let ru_writes = keys.iter().map(|k| (k.clone(), Vec::new())).collect();
        let debug = (config.debug_model && kind != EngineKind::Ru)
            .then(|| DebugModel::new(store.clone(), config.max_snapshots));
        Server {
            kind,
            state: Mutex::new(ServerState {
                time: 0,
                store,
                ru_writes,
                ru_seq: 0,
                sessions: HashMap::new(),
                debug,
                violation: None,
            }),
            recorder: None,
            next_conn: AtomicU64::new(0),
        }
    }

    /// Records every server-visible event into `recorder`.
    pub fn with_recorder(mut self, recorder: Recorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn kind(&self) -> EngineKind {
        self.kind
    }

    pub fn recorder(&self) -> Option<&Recorder> {
        self.recorder.as_ref()
    }

    /// Allocates an identity for a new connection.
    pub fn register_conn(&self) -> ConnId {
        self.next_conn.fetch_add(1, Ordering::SeqCst)
    }

    fn lock(&self) -> MutexGuard<'_, ServerState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn time(&self) -> u64 {
        self.lock().time
    }

    pub fn store(&self) -> Store {
        self.lock().store.clone()
    }

    /// What a read issued right now by a fresh transaction would return.
    pub fn peek_latest(&self, key: &str) -> Option<Value> {
        let st = self.lock();
        match self.kind {
            EngineKind::Ru => st.ru_writes.get(key).and_then(|w| w.last()).map(|(v, _)| v.clone()),
            _ => st.store.get(key).and_then(KeyHistory::newest).map(|v| v.value.clone()),
        }
    }

    pub fn model_violation(&self) -> Option<ModelViolation> {
        self.lock().violation.clone()
    }

    pub fn debug_model(&self) -> Option<DebugModel> {
        self.lock().debug.clone()
    }

    /// Replaces the shadow model. Only for exercising the violation path.
    #[doc(hidden)]
    pub fn corrupt_debug_model(&self, f: impl FnOnce(&mut DebugModel)) {
        if let Some(m) = self.lock().debug.as_mut() {
            f(m);
        }
    }

    /// Checks the shadow model against the current state.
    pub fn debug_check_model(&self) -> Verdict {
        let st = self.lock();
        match &st.debug {
            None => Verdict::Pass,
            Some(m) => match m.check(&st.store, st.time) {
                Ok(()) => Verdict::Pass,
                Err(v) => v.to_verdict(),
            },
        }
    }

    pub fn handle(&self, conn: ConnId, request: &Request) -> Response {
        let out = match request {
            Request::Start => self.handle_start(conn).map(Response::StartTs),
            Request::Read { key, ts } => self.handle_read(conn, key, *ts).map(Response::ReadResult),
            Request::WriteRu { key, value } => self.handle_write_ru(conn, key, value).map(|()| Response::Ack),
            Request::Commit { ts, writes } => {
                let ws: WriteSet = writes.iter().cloned().collect();
                self.handle_commit(conn, *ts, &ws).map(Response::CommitResult)
            }
        };
        out.unwrap_or_else(|e| Response::Error { code: e.code(), message: e.to_string() })
    }

    pub fn handle_start(&self, conn: ConnId) -> Result<Timestamp, ServerError> {
        self.with_state(|st, rec| {
            // A transaction still open on this connection is abandoned: it
            // never commits and its snapshot stays outstanding.
            let session = st.sessions.entry(conn).or_default();
            st.time += 1;
            let ts = Timestamp::new(st.time)?;
            session.begun += 1;
            session.open = Some(ts);
            let txn = session.txn();
            if let Some(m) = st.debug.as_mut() {
                m.on_start(ts);
            }
            if let Some(r) = rec {
                r.record_stamped(conn, txn, EventKind::Begin { ts })?;
            }
            Ok(ts)
        })
    }

    pub fn handle_read(&self, conn: ConnId, key: &Key, start_ts: Timestamp) -> Result<Option<Value>, ServerError> {
        self.with_state(|st, rec| {
            let txn = open_txn(st, conn, start_ts)?;
            let val = match self.kind {
                EngineKind::Si => match st.store.get(key) {
                    Some(h) => version_lookup(h, start_ts)?,
                    None => None,
                },
                EngineKind::Rc => st.store.get(key).and_then(KeyHistory::newest).map(|v| v.value.clone()),
                EngineKind::Ru => st.ru_writes.get(key).and_then(|w| w.last()).map(|(v, _)| v.clone()),
            };
            if let Some(r) = rec {
                r.record_stamped(conn, txn, EventKind::Read { key: key.clone(), val: val.clone() })?;
            }
            Ok(val)
        })
    }

    pub fn handle_write_ru(&self, conn: ConnId, key: &Key, value: &Value) -> Result<(), ServerError> {
        if self.kind != EngineKind::Ru {
            return Err(ServerError::Unsupported("write propagation", self.kind));
        }
        self.with_state(|st, rec| {
            let session = st.sessions.get(&conn).ok_or(ServerError::NoActiveTxn)?;
            if session.open.is_none() {
                return Err(ServerError::NoActiveTxn);
            }
            let txn = session.txn();
            st.ru_seq += 1;
            let seq = st.ru_seq;
            st.ru_writes.entry(key.clone()).or_default().push((value.clone(), seq));
            if let Some(r) = rec {
                r.record_stamped(conn, txn, EventKind::RuWrite { key: key.clone(), val: value.clone() })?;
            }
            Ok(())
        })
    }

    pub fn handle_commit(&self, conn: ConnId, start_ts: Timestamp, writes: &WriteSet) -> Result<bool, ServerError> {
        self.with_state(|st, rec| {
            let txn = open_txn(st, conn, start_ts)?;
            let commit_ts = match self.kind {
                EngineKind::Ru => None,
                _ if writes.updated().next().is_none() => None,
                EngineKind::Rc => Some(()),
                EngineKind::Si => {
                    let ok = writes
                        .updated()
                        .all(|(k, _)| st.store.get(k).is_none_or(|h| check_key(h, start_ts)));
                    if let Some(snapshot) = st.debug.as_ref().and_then(|m| m.s.get(&start_ts)) {
                        let agrees = equivalent_decision(&st.store, snapshot, writes)?;
                        if agrees != ok {
                            let v = ModelViolation {
                                rule: "commit-decision".into(),
                                start_ts: Some(start_ts),
                                key: None,
                                detail: format!(
                                    "per-key check gave {ok} but the snapshot comparison gave {agrees}"
                                ),
                            };
                            st.violation = Some(v.clone());
                            return Err(ServerError::Model(v));
                        }
                    }
                    if !ok {
                        st.sessions.get_mut(&conn).expect("open_txn checked").open = None;
                        if let Some(m) = st.debug.as_mut() {
                            m.on_commit(start_ts, writes, None);
                        }
                        if let Some(r) = rec {
                            r.record_local(conn, txn, EventKind::CommitAttempt { writes: writes.to_pairs() })?;
                            r.record_stamped(conn, txn, EventKind::CommitResult { committed: false, ts: None })?;
                        }
                        return Ok(false);
                    }
                    Some(())
                }
            };
            let commit_ts = match commit_ts {
                Some(()) => {
                    st.time += 1;
                    let cts = Timestamp::new(st.time)?;
                    apply_commit_in_place(&mut st.store, writes, cts)?;
                    Some(cts)
                }
                None => None,
            };
            st.sessions.get_mut(&conn).expect("open_txn checked").open = None;
            if let Some(m) = st.debug.as_mut() {
                m.on_commit(start_ts, writes, commit_ts);
            }
            if let Some(r) = rec {
                r.record_local(conn, txn, EventKind::CommitAttempt { writes: writes.to_pairs() })?;
                r.record_stamped(conn, txn, EventKind::CommitResult { committed: true, ts: commit_ts })?;
            }
            Ok(true)
        })
    }

    /// Runs a handler body under the lock, then checks the debug model.
    fn with_state<T>(
        &self,
        body: impl FnOnce(&mut ServerState, Option<&Recorder>) -> Result<T, ServerError>,
    ) -> Result<T, ServerError> {
        let mut st = self.lock();
        if let Some(v) = &st.violation {
            return Err(ServerError::Model(v.clone()));
        }
        let out = body(&mut st, self.recorder.as_ref())?;
        if let Some(m) = &st.debug {
            if let Err(v) = m.check(&st.store, st.time) {
                st.violation = Some(v.clone());
                return Err(ServerError::Model(v));
            }
        }
        Ok(out)
    }
}

/// The history-equality form of the commit decision, restricted to the
/// written keys. Keys unknown to either side count as empty.
fn equivalent_decision(current: &Store, snapshot: &Store, writes: &WriteSet) -> Result<bool, CoreError> {
    let keys: BTreeSet<&Key> = writes.updated().map(|(k, _)| k).collect();
    let restrict = |m: &Store| -> Store {
        keys.iter()
            .map(|k| ((*k).clone(), m.get(*k).cloned().unwrap_or_default()))
            .collect()
    };
    can_commit(&restrict(current), &restrict(snapshot), writes)
}

fn open_txn(st: &ServerState, conn: ConnId, ts: Timestamp) -> Result<u64, ServerError> {
    match st.sessions.get(&conn) {
        Some(s) if s.open == Some(ts) => Ok(s.txn()),
        _ => Err(ServerError::UnknownTxn(ts)),
    }
}
