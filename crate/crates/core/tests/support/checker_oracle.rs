//! Brute-force oracle for the isolation checker. For every read it
//! enumerates each event that could have supplied the value and asks whether
//! the level admits it. It works from log positions only and never consults
//! stamps or commit timestamps.

use std::collections::{BTreeSet, HashMap};

use isokv::checker::{check, IsolationLevel};
use isokv::harness::{explore_exhaustive_with, scenarios, DEFAULT_STEP_BOUND};
use isokv::trace::EventKind;
use isokv::{EngineKind, Key, Trace, Value};

pub type Txn = (u64, u64);

/// A candidate source for a read: the initial absence or some write event.
#[derive(Debug, Clone)]
enum Source {
    Initial,
    /// Position of a RuWrite, or of the CommitResult of a committed write.
    Write { pos: usize, txn: Txn, key: Key, value: Value, committed: bool },
}

fn sources(trace: &Trace) -> Vec<Source> {
    let mut attempts: HashMap<Txn, Vec<(Key, Value)>> = HashMap::new();
    let mut out = vec![Source::Initial];
    for (pos, ev) in trace.events.iter().enumerate() {
        let txn = (ev.conn, ev.txn);
        match &ev.kind {
            EventKind::RuWrite { key, val } => {
                out.push(Source::Write { pos, txn, key: key.clone(), value: val.clone(), committed: false })
            }
            EventKind::CommitAttempt { writes } => {
                attempts.insert(txn, writes.clone());
            }
            EventKind::CommitResult { committed: true, .. } => {
                for (key, value) in attempts.get(&txn).cloned().unwrap_or_default() {
                    out.push(Source::Write { pos, txn, key, value, committed: true });
                }
            }
            _ => {}
        }
    }
    out
}

fn begin_pos(trace: &Trace, txn: Txn) -> usize {
    trace
        .events
        .iter()
        .position(|e| (e.conn, e.txn) == txn && matches!(e.kind, EventKind::Begin { .. }))
        .expect("every transaction begins")
}

/// The value of `key` in the snapshot taken at log position `at`: the last
/// committed write to it positioned earlier.
fn snapshot_value(srcs: &[Source], key: &Key, at: usize) -> Option<Value> {
    srcs.iter()
        .filter_map(|s| match s {
            Source::Write { pos, key: k, value, committed: true, .. } if k == key && *pos < at => Some((*pos, value)),
            _ => None,
        })
        .max_by_key(|(p, _)| *p)
        .map(|(_, v)| v.clone())
}

fn admissible(level: IsolationLevel, src: &Source, trace: &Trace, read_pos: usize, txn: Txn, key: &Key) -> bool {
    match level {
        IsolationLevel::Ru => match src {
            Source::Initial => true,
            Source::Write { pos, key: k, .. } => k == key && *pos < read_pos,
        },
        IsolationLevel::Rc => match src {
            Source::Initial => true,
            Source::Write { pos, key: k, committed, .. } => k == key && *committed && *pos < read_pos,
        },
        IsolationLevel::Si => {
            let at = begin_pos(trace, txn);
            let srcs = sources(trace);
            let snap = snapshot_value(&srcs, key, at);
            match src {
                Source::Initial => snap.is_none(),
                Source::Write { pos, key: k, value, committed, .. } => {
                    k == key && *committed && *pos < at && snap.as_ref() == Some(value)
                }
            }
        }
    }
}

/// Index of the first event the level rejects, if any.
pub fn oracle(trace: &Trace, level: IsolationLevel) -> Option<usize> {
    let srcs = sources(trace);
    let mut own: HashMap<Txn, HashMap<Key, Value>> = HashMap::new();
    let mut attempts: HashMap<Txn, Vec<Key>> = HashMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        let txn = (ev.conn, ev.txn);
        match &ev.kind {
            EventKind::LocalWrite { key, val } | EventKind::RuWrite { key, val } => {
                own.entry(txn).or_default().insert(key.clone(), val.clone());
            }
            EventKind::Read { key, val } => {
                if let Some(mine) = own.get(&txn).and_then(|m| m.get(key)) {
                    if val.as_ref() != Some(mine) {
                        return Some(i);
                    }
                    continue;
                }
                if ev.stamp.is_none() {
                    return Some(i);
                }
                let explained = srcs.iter().any(|s| {
                    let same_value = match s {
                        Source::Initial => val.is_none(),
                        Source::Write { value, .. } => val.as_ref() == Some(value),
                    };
                    same_value && admissible(level, s, trace, i, txn, key)
                });
                if !explained {
                    return Some(i);
                }
            }
            EventKind::CommitAttempt { writes } => {
                attempts.insert(txn, writes.iter().map(|(k, _)| k.clone()).collect());
            }
            EventKind::CommitResult { committed, .. } if level == IsolationLevel::Si => {
                let start = begin_pos(trace, txn);
                let mine = attempts.get(&txn).cloned().unwrap_or_default();
                let conflict = srcs.iter().any(|s| match s {
                    Source::Write { pos, txn: other, key, committed: true, .. } => {
                        *other != txn && *pos > start && *pos < i && mine.contains(key)
                    }
                    _ => false,
                });
                if *committed == conflict {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Every value appearing anywhere in the trace, plus absence.
fn candidate_values(trace: &Trace) -> Vec<Option<Value>> {
    let mut vals = BTreeSet::new();
    for ev in &trace.events {
        match &ev.kind {
            EventKind::LocalWrite { val, .. } | EventKind::RuWrite { val, .. } => {
                vals.insert(val.clone());
            }
            EventKind::Read { val: Some(v), .. } => {
                vals.insert(v.clone());
            }
            _ => {}
        }
    }
    std::iter::once(None).chain(vals.into_iter().map(Some)).collect()
}

/// The trace itself, every single-read value substitution, and every
/// single successful commit flipped to an abort.
pub fn mutations(trace: &Trace) -> Vec<Trace> {
    let mut out = vec![trace.clone()];
    let cands = candidate_values(trace);
    for (i, ev) in trace.events.iter().enumerate() {
        match &ev.kind {
            EventKind::Read { key, val } => {
                for c in &cands {
                    if c != val {
                        let mut t = trace.clone();
                        t.events[i].kind = EventKind::Read { key: key.clone(), val: c.clone() };
                        out.push(t);
                    }
                }
            }
            EventKind::CommitResult { committed: true, .. } => {
                let mut t = trace.clone();
                t.events[i].kind = EventKind::CommitResult { committed: false, ts: None };
                out.push(t);
            }
            _ => {}
        }
    }
    out
}

pub fn ops_per_txn(trace: &Trace) -> HashMap<Txn, usize> {
    let mut n = HashMap::new();
    for ev in &trace.events {
        // A write on RU shows up as both a local write and its propagation.
        if !matches!(ev.kind, EventKind::CommitAttempt { .. } | EventKind::RuWrite { .. }) {
            *n.entry((ev.conn, ev.txn)).or_insert(0) += 1;
        }
    }
    n
}

/// Compares checker and oracle on every exhaustively explored trace of the
/// three scenarios and on its mutations. Returns (comparisons, failing
/// verdicts) or the first disagreement.
pub fn compare_on_scenarios() -> Result<(u64, u64), String> {
    let mut compared = 0u64;
    let mut failing = 0u64;
    for name in ["write-skew", "read-skew", "non-repeatable-read"] {
        let sc = scenarios::by_name(name).unwrap();
        for engine in EngineKind::ALL {
            let mut traces = Vec::new();
            explore_exhaustive_with(&sc, engine, DEFAULT_STEP_BOUND, |run| traces.push(run.trace.clone()));
            for base in &traces {
                let ops = ops_per_txn(base);
                if ops.len() > 3 || ops.values().any(|n| *n > 4) {
                    return Err(format!("{name}: trace outside the size bound: {ops:?}"));
                }
                for t in mutations(base) {
                    for level in IsolationLevel::ALL {
                        let verdict = check(&t, level);
                        let expected = oracle(&t, level);
                        if verdict.event() != expected {
                            return Err(format!(
                                "{name} on {engine} at {level}: checker says {verdict}, oracle says {expected:?}\n{}",
                                t.to_jsonl()
                            ));
                        }
                        compared += 1;
                        failing += u64::from(expected.is_some());
                    }
                }
            }
        }
    }
    Ok((compared, failing))
}
