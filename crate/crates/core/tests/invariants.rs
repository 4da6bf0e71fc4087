use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use isokv::checker::{check, check_prefix_monotone, check_replay, IsolationLevel};
use isokv::client::{Connection, TxnState};
use isokv::mvcc::{apply_commit, check_key, version_lookup};
use isokv::trace::{validate_wellformed, Recorder};
use isokv::transport::InProcessChannel;
use isokv::{EngineKind, Key, KeyHistory, Server, ServerConfig, Timestamp, Value, WriteSet};
use proptest::prelude::*;

const KEYS: [&str; 3] = ["x", "y", "z"];

fn k(i: usize) -> Key {
    Key::new(KEYS[i]).unwrap()
}

proptest! {
    #[test]
    fn keys_accept_exactly_nonempty_control_free_names(s in "\\PC{0,6}|.{0,3}[\\x00-\\x1f\\x7f].{0,3}") {
        let valid = !s.is_empty() && !s.chars().any(char::is_control);
        prop_assert_eq!(Key::new(&s).is_ok(), valid);
    }

    #[test]
    fn values_reject_line_breaks(s in ".{0,6}|.{0,3}[\r\n].{0,3}") {
        let valid = !s.contains('\n') && !s.contains('\r');
        prop_assert_eq!(Value::new(&s).is_ok(), valid);
        if valid {
            let v = Value::new(&s).unwrap();
            prop_assert_eq!(v.as_str(), s.as_str());
        }
    }

    #[test]
    fn timestamps_are_positive(t in any::<u64>()) {
        prop_assert_eq!(Timestamp::new(t).is_ok(), t > 0);
    }

    #[test]
    fn commit_extends_history_at_the_head(
        mut tss in prop::collection::btree_set(1u64..50, 0..6),
        value in -5i64..5,
        gap in 1u64..5,
        probe in 1u64..80,
    ) {
        let newest = tss.iter().next_back().copied().unwrap_or(0);
        let commit_ts = newest + gap;
        let pairs: Vec<(String, u64)> = tss.iter().rev().map(|t| (t.to_string(), *t)).collect();
        let before = KeyHistory::from_pairs(&pairs).unwrap();
        prop_assert!(before.is_well_formed());
        let mut store = BTreeMap::new();
        store.insert(k(0), before.clone());
        let mut ws = WriteSet::new();
        ws.write(k(0), Value::from_int(value));
        let after = apply_commit(store, &ws, Timestamp::new(commit_ts).unwrap()).unwrap();
        let h = &after[&k(0)];
        prop_assert!(h.is_well_formed());
        prop_assert_eq!(h.len(), before.len() + 1);
        prop_assert_eq!(h.newest().unwrap().commit_ts.get(), commit_ts);
        let probe_ts = Timestamp::new(probe).unwrap();
        tss.insert(commit_ts);
        if !tss.contains(&probe) {
            let expect = if probe > commit_ts {
                Some(Value::from_int(value))
            } else {
                version_lookup(&before, probe_ts).unwrap()
            };
            prop_assert_eq!(version_lookup(h, probe_ts).unwrap(), expect);
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Start(usize),
    Read(usize, usize),
    Write(usize, usize, i64),
    Commit(usize),
    Abandon(usize),
}

fn op_strategy(conns: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => (0..conns).prop_map(Op::Start),
        3 => (0..conns, 0..KEYS.len()).prop_map(|(c, key)| Op::Read(c, key)),
        3 => (0..conns, 0..KEYS.len(), -3i64..10).prop_map(|(c, key, v)| Op::Write(c, key, v)),
        2 => (0..conns).prop_map(Op::Commit),
        1 => (0..conns).prop_map(Op::Abandon),
    ]
}

fn engine_strategy() -> impl Strategy<Value = EngineKind> {
    prop::sample::select(EngineKind::ALL.to_vec())
}

/// Every commit timestamp present in the store.
fn commit_stamps(server: &Server) -> Vec<u64> {
    server.store().values().flat_map(|h| h.versions().iter().map(|v| v.commit_ts.get())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Random client workloads against each engine, checking the server's
    /// timestamp, store and model invariants after every operation and the
    /// recorded trace at the end.
    #[test]
    fn random_workloads_preserve_server_invariants(
        engine in engine_strategy(),
        ops in prop::collection::vec(op_strategy(3), 1..60),
    ) {
        let keys: Vec<Key> = (0..KEYS.len()).map(k).collect();
        let recorder = Recorder::new();
        let server = Arc::new(
            Server::new(engine, &keys, ServerConfig { debug_model: true, max_snapshots: None })
                .with_recorder(recorder.clone()),
        );
        let mut conns: Vec<_> = (0..3)
            .map(|_| Connection::new(InProcessChannel::open(&server), engine).with_recorder(recorder.clone()))
            .collect();
        let mut starts = BTreeSet::new();
        // Latest value of each key as seen by an RU reader.
        let mut ru_latest: BTreeMap<Key, Value> = BTreeMap::new();

        for op in ops {
            let time_before = server.time();
            let store_before = server.store();
            let mut allocated = false;
            match op {
                Op::Start(c) => {
                    conns[c].abandon();
                    let ts = conns[c].txn_start().unwrap();
                    prop_assert!(starts.insert(ts.get()), "start timestamp {ts} issued twice");
                    prop_assert_eq!(ts.get(), time_before + 1);
                    match conns[c].state() {
                        TxnState::Active { cache, .. } => prop_assert!(cache.is_empty()),
                        TxnState::Inactive => prop_assert!(false, "not active after start"),
                    }
                    allocated = true;
                }
                Op::Read(c, key) => {
                    let TxnState::Active { start_ts, cache } = conns[c].state().clone() else { continue };
                    let got = conns[c].txn_read(&k(key)).unwrap();
                    let expect = if let Some(e) = cache.get(KEYS[key]) {
                        Some(e.value.clone())
                    } else {
                        match engine {
                            EngineKind::Si => version_lookup(&store_before[&k(key)], start_ts).unwrap(),
                            EngineKind::Rc => store_before[&k(key)].newest().map(|v| v.value.clone()),
                            EngineKind::Ru => ru_latest.get(&k(key)).cloned(),
                        }
                    };
                    prop_assert_eq!(got, expect);
                }
                Op::Write(c, key, v) => {
                    if !conns[c].is_active() { continue }
                    conns[c].txn_write(k(key), Value::from_int(v)).unwrap();
                    if engine == EngineKind::Ru {
                        ru_latest.insert(k(key), Value::from_int(v));
                    }
                }
                Op::Commit(c) => {
                    let TxnState::Active { start_ts, cache } = conns[c].state().clone() else { continue };
                    let ok = conns[c].txn_commit().unwrap();
                    prop_assert!(!conns[c].is_active());
                    let expect = match engine {
                        EngineKind::Si => cache.updated().all(|(key, _)| check_key(&store_before[key], start_ts)),
                        _ => true,
                    };
                    prop_assert_eq!(ok, expect);
                    allocated = ok && !cache.is_empty() && engine != EngineKind::Ru;
                    if allocated {
                        for (key, value) in cache.updated() {
                            let newest = server.store()[key].newest().cloned().unwrap();
                            prop_assert_eq!(&newest.value, value);
                            prop_assert_eq!(newest.commit_ts.get(), time_before + 1);
                        }
                    }
                }
                Op::Abandon(c) => conns[c].abandon(),
            }
            // Time moves only when a timestamp is allocated, by exactly one.
            prop_assert_eq!(server.time(), time_before + u64::from(allocated));
            let store = server.store();
            for h in store.values() {
                prop_assert!(h.is_well_formed());
                prop_assert!(h.versions().iter().all(|v| v.commit_ts.get() <= server.time()));
            }
            let commits = commit_stamps(&server);
            prop_assert!(commits.iter().all(|t| !starts.contains(t)), "a tick was used twice");
            prop_assert!(server.model_violation().is_none());
            prop_assert!(server.debug_check_model().is_pass());
        }

        let trace = recorder.snapshot(engine, keys);
        prop_assert!(validate_wellformed(&trace).is_pass());
        prop_assert!(check_prefix_monotone(&trace).is_pass());
        prop_assert!(check_replay(&trace).is_pass(), "{}", check_replay(&trace));
        let own = match engine {
            EngineKind::Ru => IsolationLevel::Ru,
            EngineKind::Rc => IsolationLevel::Rc,
            EngineKind::Si => IsolationLevel::Si,
        };
        // Every engine satisfies its own level and everything weaker.
        for level in IsolationLevel::ALL.into_iter().filter(|l| *l <= own) {
            let v = check(&trace, level);
            prop_assert!(v.is_pass(), "{engine} trace fails {level}: {v}\n{}", trace.to_jsonl());
        }
    }
}
