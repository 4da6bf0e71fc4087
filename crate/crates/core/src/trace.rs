//! Globally ordered execution logs.
//!
//! Server-visible events (transaction begin, server reads, read-uncommitted
//! writes, commit outcomes) are appended while the server lock is held and get
//! a stamp from a single counter, so stamp order is the linearization order.
//! Client-local events (cache writes, cache-hit reads) and the client's commit
//! request carry no stamp and are positioned by program order alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EngineKind, Key, Timestamp, Value};
use crate::verdict::Verdict;

/// Identifies one client connection within a server's lifetime.
pub type ConnId = u64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub conn: ConnId,
    /// Per-connection transaction counter, starting at 0.
    pub txn: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<u64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev")]
pub enum EventKind {
    #[serde(rename = "begin")]
    Begin { ts: Timestamp },
    #[serde(rename = "read")]
    Read { key: Key, val: Option<Value> },
    /// A write buffered in the client cache.
    #[serde(rename = "write")]
    LocalWrite { key: Key, val: Value },
    /// A write propagated to a read-uncommitted server at write time.
    #[serde(rename = "ru_write")]
    RuWrite { key: Key, val: Value },
    #[serde(rename = "attempt")]
    CommitAttempt { writes: Vec<(Key, Value)> },
    #[serde(rename = "commit")]
    CommitResult {
        committed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ts: Option<Timestamp>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Begin { .. } => "begin",
            EventKind::Read { .. } => "read",
            EventKind::LocalWrite { .. } => "write",
            EventKind::RuWrite { .. } => "ru_write",
            EventKind::CommitAttempt { .. } => "attempt",
            EventKind::CommitResult { .. } => "commit",
        }
    }
}

impl TraceEvent {
    /// Canonical single-line encoding (fields in alphabetical order, no LF).
    pub fn to_line(&self) -> String {
        serde_json::to_value(self)
            .expect("trace events always serialize")
            .to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct TraceHeader {
    engine: EngineKind,
    keys: Vec<Key>,
}

/// A complete execution log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub engine: EngineKind,
    pub keys: Vec<Key>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("recorder fault: {0}")]
    Ordering(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Trace {
    pub fn new(engine: EngineKind, keys: Vec<Key>) -> Self {
        Trace { engine, keys, events: Vec::new() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header = TraceHeader { engine: self.engine, keys: self.keys.clone() };
        writeln!(out, "{}", serde_json::to_value(&header).expect("header serializes"))?;
        for event in &self.events {
            writeln!(out, "{}", event.to_line())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace lines are UTF-8")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
        Trace::read_from(BufReader::new(fs::File::open(path)?))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Trace, TraceError> {
        let mut lines = reader.lines();
        let header: TraceHeader = match lines.next() {
            Some(line) => parse_line(&line?, 1)?,
            None => {
                return Err(TraceError::Parse { line: 1, message: "missing header line".into() })
            }
        };
        let mut trace = Trace::new(header.engine, header.keys);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            trace.events.push(parse_line(&line, i + 2)?);
        }
        Ok(trace)
    }
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, lineno: usize) -> Result<T, TraceError> {
    serde_json::from_str(line).map_err(|e| TraceError::Parse { line: lineno, message: e.to_string() })
}

#[derive(Default)]
struct ConnProgress {
    txn: u64,
    attempted: bool,
    finished: bool,
}

#[derive(Default)]
struct RecorderState {
    events: Vec<TraceEvent>,
    next_stamp: u64,
    conns: HashMap<ConnId, ConnProgress>,
}

impl RecorderState {
    fn admit(&mut self, conn: ConnId, txn: u64, kind: &EventKind) -> Result<(), TraceError> {
        let fault = |msg: String| Err(TraceError::Ordering(msg));
        match kind {
            EventKind::Begin { .. } => {
                let expected = self.conns.get(&conn).map_or(0, |p| p.txn + 1);
                if txn != expected {
                    return fault(format!(
                        "conn {conn} began txn {txn}, expected txn {expected}"
                    ));
                }
                self.conns.insert(conn, ConnProgress { txn, ..Default::default() });
                Ok(())
            }
            other => {
                let Some(p) = self.conns.get_mut(&conn).filter(|p| p.txn == txn) else {
                    return fault(format!(
                        "{} event for conn {conn} txn {txn} without a matching begin",
                        other.name()
                    ));
                };
                if p.finished {
                    return fault(format!(
                        "{} event for conn {conn} txn {txn} after its commit result",
                        other.name()
                    ));
                }
                match other {
                    EventKind::CommitAttempt { .. } if p.attempted => {
                        fault(format!("second commit attempt for conn {conn} txn {txn}"))
                    }
                    EventKind::CommitAttempt { .. } => {
                        p.attempted = true;
                        Ok(())
                    }
                    EventKind::CommitResult { .. } => {
                        p.finished = true;
                        Ok(())
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

/// A shared, append-only event sink. Cloning yields another handle to the
/// same log.
#[derive(Clone, Default)]
pub struct Recorder {
    state: Arc<Mutex<RecorderState>>,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder").field("events", &self.len()).finish()
    }
}

impl Recorder {
    pub fn new() -> Self {
        Recorder::default()
    }

    /// Appends a server-visible event and returns its stamp. Callers must
    /// hold the server lock so stamps follow the linearization order.
    pub fn record_stamped(&self, conn: ConnId, txn: u64, kind: EventKind) -> Result<u64, TraceError> {
        let mut st = self.state.lock().expect("recorder lock poisoned");
        st.admit(conn, txn, &kind)?;
        st.next_stamp += 1;
        let stamp = st.next_stamp;
        st.events.push(TraceEvent { conn, txn, stamp: Some(stamp), kind });
        Ok(stamp)
    }

    /// Appends a client-local event.
    pub fn record_local(&self, conn: ConnId, txn: u64, kind: EventKind) -> Result<(), TraceError> {
        let mut st = self.state.lock().expect("recorder lock poisoned");
        st.admit(conn, txn, &kind)?;
        st.events.push(TraceEvent { conn, txn, stamp: None, kind });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("recorder lock poisoned").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies the log so far into a [`Trace`].
    pub fn snapshot(&self, engine: EngineKind, keys: Vec<Key>) -> Trace {
        let st = self.state.lock().expect("recorder lock poisoned");
        Trace { engine, keys, events: st.events.clone() }
    }
}

/// Structural checks every trace emitted by the system satisfies.
pub fn validate_wellformed(trace: &Trace) -> Verdict {
    let mut last_stamp = 0u64;
    // conn -> (current txn, attempted, finished)
    let mut conns: BTreeMap<ConnId, (u64, bool, bool)> = BTreeMap::new();
    let mut start_ts: BTreeSet<Timestamp> = BTreeSet::new();

    for (i, ev) in trace.events.iter().enumerate() {
        let fail = |rule: &str, msg: String| Verdict::fail(Some(i), rule, msg);
        if let Some(s) = ev.stamp {
            if s <= last_stamp {
                return fail("stamp-order", format!("stamp {s} does not exceed previous stamp {last_stamp}"));
            }
            last_stamp = s;
        }
        let must_be_stamped = matches!(
            ev.kind,
            EventKind::Begin { .. } | EventKind::RuWrite { .. } | EventKind::CommitResult { .. }
        );
        let must_be_local = matches!(ev.kind, EventKind::LocalWrite { .. } | EventKind::CommitAttempt { .. });
        if must_be_stamped && ev.stamp.is_none() {
            return fail("stamp-missing", format!("{} event carries no stamp", ev.kind.name()));
        }
        if must_be_local && ev.stamp.is_some() {
            return fail("stamp-unexpected", format!("client-local {} event carries a stamp", ev.kind.name()));
        }

        match &ev.kind {
            EventKind::Begin { ts } => {
                let expected = conns.get(&ev.conn).map_or(0, |c| c.0 + 1);
                if ev.txn != expected {
                    return fail(
                        "txn-sequence",
                        format!("conn {} began txn {}, expected {}", ev.conn, ev.txn, expected),
                    );
                }
                if !start_ts.insert(*ts) {
                    return fail("start-ts-reuse", format!("start timestamp {ts} issued twice"));
                }
                conns.insert(ev.conn, (ev.txn, false, false));
            }
            other => {
                let Some(c) = conns.get_mut(&ev.conn).filter(|c| c.0 == ev.txn) else {
                    return fail(
                        "txn-overlap",
                        format!(
                            "{} event of conn {} txn {} outside that transaction",
                            other.name(),
                            ev.conn,
                            ev.txn
                        ),
                    );
                };
                if c.2 {
                    return fail(
                        "after-commit",
                        format!("{} event after the commit result of conn {} txn {}", other.name(), ev.conn, ev.txn),
                    );
                }
                match other {
                    EventKind::CommitAttempt { writes } => {
                        if c.1 {
                            return fail("double-attempt", "second commit attempt".into());
                        }
                        let keys: BTreeSet<&Key> = writes.iter().map(|(k, _)| k).collect();
                        if keys.len() != writes.len() {
                            return fail("attempt-keys", "commit attempt lists a key twice".into());
                        }
                        c.1 = true;
                    }
                    EventKind::CommitResult { committed, ts } => {
                        if !c.1 {
                            return fail("result-without-attempt", "commit result without a commit attempt".into());
                        }
                        if !committed && ts.is_some() {
                            return fail("failed-commit-ts", "failed commit carries a commit timestamp".into());
                        }
                        if let Some(ts) = ts {
                            if start_ts.contains(ts) {
                                return fail("commit-ts-reuse", format!("commit timestamp {ts} was a start timestamp"));
                            }
                        }
                        c.2 = true;
                    }
                    _ => {}
                }
            }
        }
    }
    Verdict::Pass
}
