//! Pure transaction logic over version histories: snapshot lookup, the
//! first-committer-wins commit check, commit installation and the cut
//! predicate that relates a snapshot to the current store.

use std::collections::BTreeMap;

use crate::error::CoreError;
use crate::types::{Key, KeyHistory, Timestamp, Value, Version, WriteSet};

/// Returns the value of the newest version committed strictly before
/// `start_ts`, walking the history from its newest end.
///
/// A version committed exactly at `start_ts` can only come from a corrupted
/// history (timestamps are never reused) and is reported as an error.
pub fn version_lookup(history: &KeyHistory, start_ts: Timestamp) -> Result<Option<Value>, CoreError> {
    for version in history.versions() {
        if version.commit_ts == start_ts {
            return Err(CoreError::TimestampCollision { ts: start_ts });
        }
        if version.commit_ts < start_ts {
            return Ok(Some(version.value.clone()));
        }
    }
    Ok(None)
}

/// Per-key commit check: no version of the key was committed after `start_ts`.
pub fn check_key(history: &KeyHistory, start_ts: Timestamp) -> bool {
    history.newest().is_none_or(|v| v.commit_ts < start_ts)
}

/// History-equality form of the commit check: every key the transaction
/// updated has the same history now as in its start snapshot.
pub fn can_commit(
    current: &BTreeMap<Key, KeyHistory>,
    snapshot: &BTreeMap<Key, KeyHistory>,
    writes: &WriteSet,
) -> Result<bool, CoreError> {
    let mut ok = true;
    for (key, _) in writes.updated() {
        let now = current.get(key).ok_or_else(|| CoreError::MissingKey(key.clone()))?;
        let then = snapshot.get(key).ok_or_else(|| CoreError::MissingKey(key.clone()))?;
        ok &= now == then;
    }
    Ok(ok)
}

/// Installs every updated write as the newest version of its key at
/// `commit_ts`. Keys absent from the store are created.
pub fn apply_commit(
    mut store: BTreeMap<Key, KeyHistory>,
    writes: &WriteSet,
    commit_ts: Timestamp,
) -> Result<BTreeMap<Key, KeyHistory>, CoreError> {
    apply_commit_in_place(&mut store, writes, commit_ts)?;
    Ok(store)
}

pub(crate) fn apply_commit_in_place(
    store: &mut BTreeMap<Key, KeyHistory>,
    writes: &WriteSet,
    commit_ts: Timestamp,
) -> Result<(), CoreError> {
    if let Some(stale) = store
        .values()
        .filter_map(KeyHistory::newest)
        .map(|v| v.commit_ts)
        .find(|ts| *ts >= commit_ts)
    {
        return Err(CoreError::Contract(format!(
            "commit timestamp {commit_ts} is not fresh (store already holds {stale})"
        )));
    }
    for (key, value) in writes.updated() {
        store
            .entry(key.clone())
            .or_default()
            .push_newest(Version::new(value.clone(), commit_ts));
    }
    Ok(())
}

/// `t` cuts `full` at `prefix`: `full` is `prefix` extended with newer
/// versions, everything in `prefix` is older than `t` and everything added is
/// newer than `t`. Histories are newest first, so `prefix` is a suffix of `full`.
pub fn is_cut(t: Timestamp, prefix: &KeyHistory, full: &KeyHistory) -> bool {
    let (full, old) = (full.versions(), prefix.versions());
    if old.len() > full.len() {
        return false;
    }
    let (added, tail) = full.split_at(full.len() - old.len());
    tail == old
        && old.iter().all(|v| v.commit_ts < t)
        && added.iter().all(|v| v.commit_ts > t)
}
