//! Decides whether a trace is consistent with read uncommitted, read
//! committed or snapshot isolation.
//!
//! Every level shares the own-write rule: a read in a transaction that wrote
//! the key returns that transaction's latest write. Other reads are judged
//! against server stamps:
//! - RU: none, or a value written (propagated or committed) before the read.
//! - RC: none, or a value committed before the read.
//! - SI: exactly the latest value committed before the transaction began.
//!
//! SI additionally requires a commit to succeed iff no other transaction
//! committed a write to one of its keys between its begin and its commit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::server::{Server, ServerConfig};
use crate::trace::{validate_wellformed, ConnId, EventKind, Trace};
use crate::types::{Key, KeyHistory, Timestamp, Value, Version, WriteSet};
use crate::verdict::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsolationLevel {
    Ru,
    Rc,
    Si,
}

impl IsolationLevel {
    pub const ALL: [IsolationLevel; 3] = [IsolationLevel::Ru, IsolationLevel::Rc, IsolationLevel::Si];

    pub fn as_str(self) -> &'static str {
        match self {
            IsolationLevel::Ru => "ru",
            IsolationLevel::Rc => "rc",
            IsolationLevel::Si => "si",
        }
    }
}

impl fmt::Display for IsolationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IsolationLevel {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, CoreError> {
        IsolationLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| CoreError::UnknownLevel(s.to_string()))
    }
}

type TxnId = (ConnId, u64);

/// A successful commit's effect on one key.
#[derive(Clone, Debug)]
struct CommittedWrite {
    stamp: u64,
    /// Commit timestamp, or the stamp when the engine assigns none.
    order: u64,
    txn: TxnId,
    key: Key,
    value: Value,
}

/// Facts gathered in one pass over a well-formed trace.
struct Index {
    begin_stamp: HashMap<TxnId, u64>,
    attempts: HashMap<TxnId, Vec<(Key, Value)>>,
    committed: Vec<CommittedWrite>,
    ru_writes: Vec<(u64, Key, Value)>,
}

impl Index {
    fn build(trace: &Trace) -> Index {
        let mut ix = Index {
            begin_stamp: HashMap::new(),
            attempts: HashMap::new(),
            committed: Vec::new(),
            ru_writes: Vec::new(),
        };
        for ev in &trace.events {
            let id = (ev.conn, ev.txn);
            match &ev.kind {
                EventKind::Begin { .. } => {
                    ix.begin_stamp.insert(id, ev.stamp.unwrap_or(0));
                }
                EventKind::CommitAttempt { writes } => {
                    ix.attempts.insert(id, writes.clone());
                }
                EventKind::RuWrite { key, val } => {
                    ix.ru_writes.push((ev.stamp.unwrap_or(0), key.clone(), val.clone()));
                }
                EventKind::CommitResult { committed: true, ts } => {
                    let stamp = ev.stamp.unwrap_or(0);
                    let order = ts.map_or(stamp, Timestamp::get);
                    for (key, value) in ix.attempts.get(&id).into_iter().flatten() {
                        ix.committed.push(CommittedWrite {
                            stamp,
                            order,
                            txn: id,
                            key: key.clone(),
                            value: value.clone(),
                        });
                    }
                }
                _ => {}
            }
        }
        ix
    }

    fn committed_before<'a>(&'a self, key: &'a Key, stamp: u64) -> impl Iterator<Item = &'a CommittedWrite> + 'a {
        self.committed.iter().filter(move |w| w.stamp < stamp && &w.key == key)
    }
}

fn show(v: &Option<Value>) -> String {
    match v {
        Some(v) => format!("{v:?}"),
        None => "none".into(),
    }
}

/// Classifies `trace` at `level`. Ill-formed traces fail with the
/// structural rule they break.
pub fn check(trace: &Trace, level: IsolationLevel) -> Verdict {
    let wf = validate_wellformed(trace);
    if !wf.is_pass() {
        return wf;
    }
    let ix = Index::build(trace);
    let mut own: HashMap<TxnId, BTreeMap<Key, Value>> = HashMap::new();

    for (i, ev) in trace.events.iter().enumerate() {
        let id = (ev.conn, ev.txn);
        match &ev.kind {
            EventKind::LocalWrite { key, val } | EventKind::RuWrite { key, val } => {
                own.entry(id).or_default().insert(key.clone(), val.clone());
            }
            EventKind::Read { key, val } => {
                if let Some(mine) = own.get(&id).and_then(|m| m.get(key)) {
                    if val.as_ref() != Some(mine) {
                        return Verdict::fail(
                            Some(i),
                            "own-write",
                            format!("read of {key} returned {} after this transaction wrote {mine:?}", show(val)),
                        );
                    }
                    continue;
                }
                let Some(stamp) = ev.stamp else {
                    return Verdict::fail(
                        Some(i),
                        "unstamped-read",
                        format!("client-local read of {key} without a prior write by its transaction"),
                    );
                };
                if let Some(v) = read_violation(&ix, level, id, key, val, stamp) {
                    return Verdict::fail(Some(i), &format!("{level}-read"), v);
                }
            }
            EventKind::CommitResult { committed, .. } if level == IsolationLevel::Si => {
                let stamp = ev.stamp.unwrap_or(0);
                let begin = ix.begin_stamp[&id];
                let writes = ix.attempts.get(&id).map(Vec::as_slice).unwrap_or(&[]);
                let conflict = ix.committed.iter().find(|w| {
                    w.txn != id
                        && w.stamp > begin
                        && w.stamp < stamp
                        && writes.iter().any(|(k, _)| *k == w.key)
                });
                match (committed, conflict) {
                    (true, Some(w)) => {
                        return Verdict::fail(
                            Some(i),
                            "si-commit",
                            format!(
                                "committed although conn {} txn {} committed {} in between",
                                w.txn.0, w.txn.1, w.key
                            ),
                        )
                    }
                    (false, None) => {
                        return Verdict::fail(Some(i), "si-commit", "aborted without a write-write conflict")
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    Verdict::Pass
}

fn read_violation(
    ix: &Index,
    level: IsolationLevel,
    id: TxnId,
    key: &Key,
    val: &Option<Value>,
    stamp: u64,
) -> Option<String> {
    match level {
        IsolationLevel::Ru => {
            let v = val.as_ref()?;
            let written = ix.ru_writes.iter().any(|(s, k, w)| *s < stamp && k == key && w == v)
                || ix.committed_before(key, stamp).any(|w| &w.value == v);
            (!written).then(|| format!("read {key} = {v:?}, which no one wrote before the read"))
        }
        IsolationLevel::Rc => {
            let v = val.as_ref()?;
            let committed = ix.committed_before(key, stamp).any(|w| &w.value == v);
            (!committed).then(|| format!("read {key} = {v:?}, which was not committed before the read"))
        }
        IsolationLevel::Si => {
            let begin = ix.begin_stamp[&id];
            let expected = ix.committed_before(key, begin).max_by_key(|w| w.stamp).map(|w| w.value.clone());
            (expected != *val).then(|| {
                format!(
                    "read {key} = {}, but the latest value committed before the transaction began is {}",
                    show(val),
                    show(&expected)
                )
            })
        }
    }
}

/// Versions of `key` committed by successful commits stamped before
/// `stamp`, newest first. Engines without commit timestamps use the stamp.
pub fn committed_history_at(trace: &Trace, key: &Key, stamp: u64) -> KeyHistory {
    history_from(&Index::build(trace), key, stamp)
}

fn history_from(ix: &Index, key: &Key, stamp: u64) -> KeyHistory {
    let mut writes: Vec<&CommittedWrite> = ix.committed_before(key, stamp).collect();
    writes.sort_by_key(|w| std::cmp::Reverse(w.order));
    KeyHistory::from_newest_first(
        writes
            .into_iter()
            .filter_map(|w| Timestamp::new(w.order).ok().map(|ts| Version::new(w.value.clone(), ts)))
            .collect(),
    )
}

/// Each successful commit only extends a key's committed history: the
/// history before it is a prefix of the history after it.
pub fn check_prefix_monotone(trace: &Trace) -> Verdict {
    let ix = Index::build(trace);
    let mut keys: Vec<&Key> = ix.committed.iter().map(|w| &w.key).collect();
    keys.sort();
    keys.dedup();
    for key in keys {
        let mut prev = KeyHistory::empty();
        for (i, ev) in trace.events.iter().enumerate() {
            let (EventKind::CommitResult { committed: true, .. }, Some(stamp)) = (&ev.kind, ev.stamp) else {
                continue;
            };
            let next = history_from(&ix, key, stamp + 1);
            let (old, new) = (prev.versions(), next.versions());
            if old.len() > new.len() || new[new.len() - old.len()..] != *old {
                return Verdict::fail(
                    Some(i),
                    "prefix-monotone",
                    format!("commit rewrote the earlier history of {key} instead of extending it"),
                );
            }
            prev = next;
        }
    }
    Verdict::Pass
}

/// Replays the stamped events in stamp order against a fresh engine of the
/// trace's kind and compares every read result and commit outcome.
pub fn check_replay(trace: &Trace) -> Verdict {
    let server = Server::new(trace.engine, &trace.keys, ServerConfig::default());
    let mut open: HashMap<ConnId, Timestamp> = HashMap::new();
    let mut attempts: HashMap<TxnId, WriteSet> = HashMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        let id = (ev.conn, ev.txn);
        let mismatch = |what: String| Verdict::fail(Some(i), "replay", what);
        match (&ev.kind, ev.stamp) {
            (EventKind::CommitAttempt { writes }, _) => {
                attempts.insert(id, writes.iter().cloned().collect());
            }
            (_, None) => {}
            (EventKind::Begin { ts }, Some(_)) => match server.handle_start(ev.conn) {
                Ok(got) if got == *ts => {
                    open.insert(ev.conn, got);
                }
                other => return mismatch(format!("start returned {other:?}, trace has {ts}")),
            },
            (EventKind::Read { key, val }, Some(_)) => {
                let Some(ts) = open.get(&ev.conn) else {
                    return mismatch("read outside a transaction".into());
                };
                match server.handle_read(ev.conn, key, *ts) {
                    Ok(got) if got == *val => {}
                    other => return mismatch(format!("read of {key} returned {other:?}, trace has {}", show(val))),
                }
            }
            (EventKind::RuWrite { key, val }, Some(_)) => {
                if let Err(e) = server.handle_write_ru(ev.conn, key, val) {
                    return mismatch(format!("write of {key} failed: {e}"));
                }
            }
            (EventKind::CommitResult { committed, ts }, Some(_)) => {
                let Some(start) = open.remove(&ev.conn) else {
                    return mismatch("commit outside a transaction".into());
                };
                let writes = attempts.remove(&id).unwrap_or_default();
                match server.handle_commit(ev.conn, start, &writes) {
                    Ok(got) if got == *committed => {}
                    other => return mismatch(format!("commit returned {other:?}, trace has {committed}")),
                }
                let now = Timestamp::new(server.time()).ok();
                if *committed && ts.is_some() && *ts != now {
                    return mismatch(format!("commit timestamp {now:?}, trace has {ts:?}"));
                }
            }
            (EventKind::LocalWrite { .. }, Some(_)) => {}
        }
    }
    Verdict::Pass
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InclusionReport {
    pub ru: Verdict,
    pub rc: Verdict,
    pub si: Verdict,
    /// A stronger level passed while a weaker one failed.
    pub violation: bool,
}

pub fn check_inclusion(trace: &Trace) -> InclusionReport {
    let ru = check(trace, IsolationLevel::Ru);
    let rc = check(trace, IsolationLevel::Rc);
    let si = check(trace, IsolationLevel::Si);
    let violation = (si.is_pass() && !rc.is_pass()) || (rc.is_pass() && !ru.is_pass());
    InclusionReport { ru, rc, si, violation }
}
