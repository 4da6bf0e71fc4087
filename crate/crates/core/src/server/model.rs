//! Runtime shadow of the server's logical model: the current time, the
//! logical store, and the snapshot each outstanding start timestamp was
//! issued against. Every outstanding start timestamp must cut every current
//! history at its snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::mvcc::{apply_commit_in_place, is_cut};
use crate::types::{Key, KeyHistory, Store, Timestamp, WriteSet};
use crate::verdict::Verdict;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelViolation {
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_ts: Option<Timestamp>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<Key>,
    pub detail: String,
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.rule, self.detail)
    }
}

impl ModelViolation {
    pub fn to_verdict(&self) -> Verdict {
        Verdict::fail(None, &self.rule, self.detail.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DebugModel {
    /// Shadow of the server clock.
    pub t: u64,
    /// Shadow of the committed store.
    pub m: Store,
    /// Outstanding start timestamps and the store they were issued against.
    pub s: BTreeMap<Timestamp, Store>,
    pub max_snapshots: Option<usize>,
}

impl DebugModel {
    pub fn new(m: Store, max_snapshots: Option<usize>) -> Self {
        DebugModel { t: 0, m, s: BTreeMap::new(), max_snapshots }
    }

    pub(crate) fn on_start(&mut self, ts: Timestamp) {
        self.t = ts.get();
        self.s.insert(ts, self.m.clone());
        if let Some(cap) = self.max_snapshots {
            while self.s.len() > cap {
                self.s.pop_first();
            }
        }
    }

    /// Removes the finished transaction's snapshot and, on a successful
    /// commit with writes, installs them in the shadow store.
    pub(crate) fn on_commit(&mut self, start_ts: Timestamp, writes: &WriteSet, commit_ts: Option<Timestamp>) {
        self.s.remove(&start_ts);
        if let Some(cts) = commit_ts {
            // A stale timestamp here is itself a model violation; `check`
            // reports it through the shadow/store mismatch.
            let _ = apply_commit_in_place(&mut self.m, writes, cts);
            self.t = cts.get();
        }
    }

    /// Checks the shadow against the real server state and the cut property.
    pub fn check(&self, store: &Store, time: u64) -> Result<(), ModelViolation> {
        if self.t != time {
            return Err(ModelViolation {
                rule: "time-shadow".into(),
                start_ts: None,
                key: None,
                detail: format!("model time {} differs from server time {time}", self.t),
            });
        }
        let empty = KeyHistory::empty();
        let keys: BTreeSet<&Key> = self.m.keys().chain(store.keys()).collect();
        for k in &keys {
            let (shadow, real) = (self.m.get(*k).unwrap_or(&empty), store.get(*k).unwrap_or(&empty));
            if shadow != real {
                return Err(ModelViolation {
                    rule: "store-shadow".into(),
                    start_ts: None,
                    key: Some((*k).clone()),
                    detail: format!("model history of {k} differs from the server store"),
                });
            }
        }
        for (start, snapshot) in &self.s {
            if start.get() > self.t {
                return Err(ModelViolation {
                    rule: "snapshot-future".into(),
                    start_ts: Some(*start),
                    key: None,
                    detail: format!("snapshot at {start} is newer than model time {}", self.t),
                });
            }
            for k in keys.iter().copied().chain(snapshot.keys()) {
                let prefix = snapshot.get(k).unwrap_or(&empty);
                let full = self.m.get(k).unwrap_or(&empty);
                if !is_cut(*start, prefix, full) {
                    return Err(ModelViolation {
                        rule: "cut".into(),
                        start_ts: Some(*start),
                        key: Some(k.clone()),
                        detail: format!("start timestamp {start} does not cut the history of {k} at its snapshot"),
                    });
                }
            }
        }
        Ok(())
    }
}
