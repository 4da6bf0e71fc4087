use isokv::harness::{
    evaluate_expected, explore_exhaustive, explore_random, explore_random_with, replay_schedule, scenarios,
    DEFAULT_STEP_BOUND,
};
use isokv::trace::{EventKind, TraceError};
use isokv::{EngineKind, Key, Timestamp, Trace, TraceEvent, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

/// Number of ways to interleave straight-line clients of the given lengths.
fn multinomial(steps: &[u64]) -> u64 {
    factorial(steps.iter().sum()) / steps.iter().map(|s| factorial(*s)).product::<u64>()
}

#[test]
fn straight_line_scenarios_explore_every_interleaving_once() {
    // Client step counts, counting start, each read and write, and commit.
    let cases: [(&str, &[u64]); 6] = [
        ("write-skew", &[4, 4]),
        ("read-skew", &[4, 4]),
        ("disjoint-writes", &[3, 3]),
        ("read-own-data", &[3, 4]),
        ("non-repeatable-read", &[3, 4]),
        ("atomic-transactions", &[4, 4, 4]),
    ];
    for (name, steps) in cases {
        let sc = scenarios::by_name(name).unwrap();
        for engine in EngineKind::ALL {
            let report = explore_exhaustive(&sc, engine, DEFAULT_STEP_BOUND);
            assert_eq!(report.interleavings, multinomial(steps), "{name} on {engine}");
            assert_eq!(report.complete, report.interleavings);
            assert_eq!(report.inconclusive, 0);
        }
    }
    assert_eq!(multinomial(&[4, 4]), 70);
}

#[test]
fn distinct_schedules_in_exhaustive_mode() {
    let sc = scenarios::by_name("bank-transfer").unwrap();
    let mut seen = std::collections::BTreeSet::new();
    isokv::harness::explore_exhaustive_with(&sc, EngineKind::Si, DEFAULT_STEP_BOUND, |run| {
        assert!(seen.insert(run.schedule.clone()), "schedule {:?} explored twice", run.schedule);
    });
    assert!(!seen.is_empty());
}

#[test]
fn replaying_a_schedule_reproduces_the_run() {
    for name in ["bank-transfer", "difference", "read-uncommitted-data", "commit-order"] {
        let sc = scenarios::by_name(name).unwrap();
        for engine in EngineKind::ALL {
            let mut runs = Vec::new();
            explore_random_with(&sc, engine, 7, 40, DEFAULT_STEP_BOUND, |run| runs.push(run.clone()));
            assert_eq!(runs.len(), 40);
            for run in runs {
                let again = replay_schedule(&sc, engine, &run.schedule).unwrap();
                assert_eq!(again.trace, run.trace, "{name} on {engine}: {:?}", run.schedule);
                assert_eq!(again.status, run.status);
                assert_eq!(again.assertion_failures, run.assertion_failures);
                assert_eq!(again.structural, run.structural);
            }
        }
    }
}

#[test]
fn a_schedule_naming_a_finished_or_missing_client_is_rejected() {
    let sc = scenarios::by_name("capturing-causality").unwrap();
    // A wait that has not been satisfied polls again, as in random mode.
    let polled = replay_schedule(&sc, EngineKind::Si, &[2, 2]).unwrap();
    assert!(!polled.outcome.finished[2]);
    // Client 0 has three steps.
    assert!(replay_schedule(&sc, EngineKind::Si, &[0, 0, 0]).is_ok());
    assert!(replay_schedule(&sc, EngineKind::Si, &[0, 0, 0, 0]).is_err());
    assert!(replay_schedule(&sc, EngineKind::Si, &[9]).is_err());
}

#[test]
fn random_reports_are_byte_identical_across_runs() {
    for name in ["write-skew", "bank-transfer", "difference"] {
        let sc = scenarios::by_name(name).unwrap();
        for engine in EngineKind::ALL {
            let a = serde_json::to_string(&explore_random(&sc, engine, 1234, 200, DEFAULT_STEP_BOUND)).unwrap();
            let b = serde_json::to_string(&explore_random(&sc, engine, 1234, 200, DEFAULT_STEP_BOUND)).unwrap();
            assert_eq!(a, b, "{name} on {engine}");
        }
    }
}

#[test]
fn si_engine_meets_expectations_on_the_phenomena() {
    for name in ["write-skew", "read-skew", "non-repeatable-read", "dirty-read", "disjoint-writes", "read-only-commit"] {
        let sc = scenarios::by_name(name).unwrap();
        let report = explore_exhaustive(&sc, EngineKind::Si, DEFAULT_STEP_BOUND);
        assert!(evaluate_expected(&sc, &report).unwrap(), "{name}: {report:?}");
        assert!(report.expected);
    }
    let other = scenarios::by_name("write-skew").unwrap();
    let report = explore_exhaustive(&scenarios::by_name("read-skew").unwrap(), EngineKind::Si, DEFAULT_STEP_BOUND);
    assert!(evaluate_expected(&other, &report).is_err());
}

fn random_event(rng: &mut ChaCha8Rng, stamp: &mut u64) -> TraceEvent {
    let key = Key::new(["x", "y", "z", "src", "dst"][rng.gen_range(0..5)]).unwrap();
    let value = Value::from_int(rng.gen_range(-100..100));
    let ts = Timestamp::new(rng.gen_range(1..1000)).unwrap();
    let kind = match rng.gen_range(0..6) {
        0 => EventKind::Begin { ts },
        1 => EventKind::Read { key, val: rng.gen_bool(0.5).then_some(value) },
        2 => EventKind::LocalWrite { key, val: value },
        3 => EventKind::RuWrite { key, val: value },
        4 => EventKind::CommitAttempt { writes: vec![(key, value)] },
        _ => EventKind::CommitResult { committed: rng.gen_bool(0.5), ts: rng.gen_bool(0.5).then_some(ts) },
    };
    let stamped = !matches!(kind, EventKind::LocalWrite { .. } | EventKind::CommitAttempt { .. });
    let stamp = stamped.then(|| {
        *stamp += 1;
        *stamp
    });
    TraceEvent { conn: rng.gen_range(0..4), txn: rng.gen_range(0..3), stamp, kind }
}

#[test]
fn thousand_event_trace_round_trips_through_a_file() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut stamp = 0;
    let events: Vec<_> = (0..1000).map(|_| random_event(&mut rng, &mut stamp)).collect();
    let trace = Trace { engine: EngineKind::Rc, keys: vec![Key::new("x").unwrap()], events };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    trace.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert_eq!(Trace::load(&path).unwrap(), trace);
    assert_eq!(trace.to_jsonl(), text);
}

#[test]
fn malformed_trace_line_is_reported_by_number() {
    let sc = scenarios::by_name("write-skew").unwrap();
    let run = replay_schedule(&sc, EngineKind::Si, &[0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    let mut lines: Vec<String> = run.trace.to_jsonl().lines().map(String::from).collect();
    lines[3] = "{\"ev\":\"teleport\"}".into();
    let err = Trace::read_from(lines.join("\n").as_bytes()).unwrap_err();
    match err {
        TraceError::Parse { line, .. } => assert_eq!(line, 4),
        other => panic!("unexpected {other}"),
    }
}
