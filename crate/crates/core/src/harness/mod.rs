//! Deterministic interleaving exploration of litmus programs.
//!
//! A schedule is the sequence of client indices that took a step. Exhaustive
//! mode enumerates schedules depth first by replaying prefixes against a fresh
//! server, trying runnable clients in ascending order. Random mode draws each
//! choice from a seeded generator.
//!
//! In exhaustive mode a wait poll is runnable only when it would succeed. A
//! failing poll commits nothing visible, so dropping it loses no outcome and
//! keeps the schedule space finite.

pub mod program;
pub mod scenarios;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use program::{Env, Instr, Program};
pub use scenarios::{Scenario, Witness};

use crate::checker::{check_inclusion, check_prefix_monotone, check_replay, InclusionReport, IsolationLevel};
use crate::client::Connection;
use crate::server::{Server, ServerConfig};
use crate::trace::{validate_wellformed, Recorder, Trace};
use crate::transport::InProcessChannel;
use crate::types::{EngineKind, Key, Value};

/// Failure records kept per report list; counts are never capped.
pub const MAX_RECORDED_FAILURES: usize = 20;
pub const DEFAULT_STEP_BOUND: usize = 200;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("report is for scenario {report}, not {scenario}")]
    ScenarioMismatch { scenario: String, report: String },
    #[error("schedule step {index} names client {client}, which cannot run")]
    BadSchedule { index: usize, client: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exhaustive,
    Random { seed: u64, runs: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    /// The step bound was hit.
    Bounded,
    /// No client could run: every remaining one waits on a value that never arrives.
    Deadlock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitRecord {
    /// The transaction had buffered writes.
    pub wrote: bool,
    pub committed: bool,
}

/// What one run left behind, for scenario side conditions and witnesses.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub envs: Vec<Env>,
    pub commits: Vec<Vec<CommitRecord>>,
    pub finished: Vec<bool>,
    /// Latest value of each declared key after the run.
    pub finals: BTreeMap<Key, Option<Value>>,
}

/// Everything produced by one run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub schedule: Vec<usize>,
    pub status: RunStatus,
    pub trace: Trace,
    pub outcome: RunOutcome,
    /// (label, detail) of each assertion or side condition that failed.
    pub assertion_failures: Vec<(String, String)>,
    pub verdicts: InclusionReport,
    /// (check, detail) of each structural check that failed.
    pub structural: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub schedule: Vec<usize>,
    pub rule: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LevelTally {
    pub pass: u64,
    pub fail: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<FailureRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WitnessTally {
    pub count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_schedule: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExplorationReport {
    pub scenario: String,
    pub engine: EngineKind,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub step_bound: usize,
    /// Schedules explored, complete or not.
    pub interleavings: u64,
    pub complete: u64,
    pub inconclusive: u64,
    /// Runs with at least one failed assertion or side condition.
    pub assertion_failures: u64,
    pub failures: Vec<FailureRecord>,
    pub verdicts: BTreeMap<String, LevelTally>,
    /// Runs separating adjacent levels: "rc-pass-si-fail", "ru-pass-rc-fail".
    pub level_gaps: BTreeMap<String, WitnessTally>,
    /// Runs failing each structural check, by check name.
    pub structural: BTreeMap<String, u64>,
    pub structural_failures: Vec<FailureRecord>,
    /// Required outcomes for this scenario and mode, with their counts.
    pub witnesses: BTreeMap<String, WitnessTally>,
    /// Observed bindings and commit outcomes of complete runs.
    pub outcomes: BTreeMap<String, u64>,
    pub expected: bool,
}

impl ExplorationReport {
    fn new(sc: &Scenario, engine: EngineKind, mode: &str, seed: Option<u64>, step_bound: usize) -> Self {
        let mut r = ExplorationReport {
            scenario: sc.name.to_string(),
            engine,
            mode: mode.to_string(),
            seed,
            step_bound,
            interleavings: 0,
            complete: 0,
            inconclusive: 0,
            assertion_failures: 0,
            failures: Vec::new(),
            verdicts: IsolationLevel::ALL.iter().map(|l| (l.to_string(), LevelTally::default())).collect(),
            level_gaps: ["rc-pass-si-fail", "ru-pass-rc-fail"]
                .iter()
                .map(|g| (g.to_string(), WitnessTally::default()))
                .collect(),
            structural: STRUCTURAL_CHECKS.iter().map(|c| (c.to_string(), 0)).collect(),
            structural_failures: Vec::new(),
            witnesses: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            expected: false,
        };
        if mode == "exhaustive" {
            for w in sc.witnesses.iter().filter(|w| w.engines.contains(&engine)) {
                r.witnesses.insert(w.label.to_string(), WitnessTally::default());
            }
        }
        r
    }

    fn absorb(&mut self, sc: &Scenario, run: &RunRecord) {
        self.interleavings += 1;
        match run.status {
            RunStatus::Complete => self.complete += 1,
            _ => self.inconclusive += 1,
        }
        if !run.assertion_failures.is_empty() {
            self.assertion_failures += 1;
            for (label, detail) in &run.assertion_failures {
                push_capped(&mut self.failures, &run.schedule, label, detail);
            }
        }
        let v = &run.verdicts;
        for (level, verdict) in [("ru", &v.ru), ("rc", &v.rc), ("si", &v.si)] {
            let t = self.verdicts.get_mut(level).expect("all levels present");
            if verdict.is_pass() {
                t.pass += 1;
            } else {
                t.fail += 1;
                if t.first_failure.is_none() {
                    t.first_failure = Some(FailureRecord {
                        schedule: run.schedule.clone(),
                        rule: verdict.rule().unwrap_or_default().to_string(),
                        detail: verdict.to_string(),
                    });
                }
            }
        }
        let gaps = [
            ("rc-pass-si-fail", v.rc.is_pass() && !v.si.is_pass()),
            ("ru-pass-rc-fail", v.ru.is_pass() && !v.rc.is_pass()),
        ];
        for (name, hit) in gaps {
            if hit {
                bump(self.level_gaps.get_mut(name).expect("gap present"), &run.schedule);
            }
        }
        for (check, detail) in &run.structural {
            *self.structural.entry(check.clone()).or_default() += 1;
            push_capped(&mut self.structural_failures, &run.schedule, check, detail);
        }
        if run.status == RunStatus::Complete {
            *self.outcomes.entry(outcome_key(sc, &run.outcome)).or_default() += 1;
        }
        for w in &sc.witnesses {
            if let Some(t) = self.witnesses.get_mut(w.label) {
                if (w.holds)(&run.outcome) {
                    bump(t, &run.schedule);
                }
            }
        }
    }
}

fn bump(t: &mut WitnessTally, schedule: &[usize]) {
    t.count += 1;
    if t.first_schedule.is_none() {
        t.first_schedule = Some(schedule.to_vec());
    }
}

fn push_capped(list: &mut Vec<FailureRecord>, schedule: &[usize], rule: &str, detail: &str) {
    if list.len() < MAX_RECORDED_FAILURES {
        list.push(FailureRecord { schedule: schedule.to_vec(), rule: rule.to_string(), detail: detail.to_string() });
    }
}

pub const STRUCTURAL_CHECKS: [&str; 6] = ["wellformed", "monotone", "inclusion", "soundness", "replay", "model"];

fn outcome_key(sc: &Scenario, o: &RunOutcome) -> String {
    let mut parts = Vec::new();
    for (i, env) in o.envs.iter().enumerate() {
        let bound: Vec<&str> = sc.clients[i].init.iter().map(|(n, _)| *n).collect();
        for (name, v) in env.iter().filter(|(n, _)| !bound.contains(n)) {
            parts.push(format!("c{i}.{name}={}", v.as_ref().map_or("none", Value::as_str)));
        }
        for (j, c) in o.commits[i].iter().enumerate() {
            let tag = if c.committed { "ok" } else { "abort" };
            parts.push(format!("c{i}.commit{j}={tag}"));
        }
    }
    parts.join(" ")
}

/// True iff the report shows no failed assertion or side condition, no
/// structural failure, at least one complete run, and every required
/// witness.
pub fn evaluate_expected(sc: &Scenario, report: &ExplorationReport) -> Result<bool, HarnessError> {
    if report.scenario != sc.name {
        return Err(HarnessError::ScenarioMismatch { scenario: sc.name.into(), report: report.scenario.clone() });
    }
    Ok(report.assertion_failures == 0
        && report.structural.values().all(|n| *n == 0)
        && report.complete > 0
        && report.witnesses.values().all(|w| w.count > 0))
}

struct ClientRun {
    conn: Connection<InProcessChannel>,
    pc: usize,
    env: Env,
    commits: Vec<CommitRecord>,
    error: bool,
}

/// One live execution: a fresh debug-model server and one connection per client.
struct World<'a> {
    sc: &'a Scenario,
    engine: EngineKind,
    server: Arc<Server>,
    recorder: Recorder,
    clients: Vec<ClientRun>,
    failures: Vec<(String, String)>,
    steps: usize,
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario, engine: EngineKind) -> Self {
        let recorder = Recorder::new();
        let config = ServerConfig { debug_model: true, max_snapshots: None };
        let server = Arc::new(Server::new(engine, &sc.keys, config).with_recorder(recorder.clone()));
        let mut failures = Vec::new();
        let mut setup = Connection::new(InProcessChannel::open(&server), engine).with_recorder(recorder.clone());
        if !sc.setup.is_empty() {
            let res = setup.run(|c| {
                for (k, v) in &sc.setup {
                    c.txn_write(k.clone(), v.clone())?;
                }
                Ok::<_, crate::client::ClientError>(())
            });
            if !matches!(res, Ok(true)) {
                failures.push(("setup".to_string(), format!("initial values not committed: {res:?}")));
            }
        }
        let clients = sc
            .clients
            .iter()
            .map(|p| ClientRun {
                conn: Connection::new(InProcessChannel::open(&server), engine).with_recorder(recorder.clone()),
                pc: 0,
                env: p.init.iter().map(|(n, v)| (*n, Some(v.clone()))).collect(),
                commits: Vec::new(),
                error: false,
            })
            .collect();
        let mut w = World { sc, engine, server, recorder, clients, failures, steps: 0 };
        for i in 0..w.clients.len() {
            w.settle(i);
        }
        w
    }

    fn program(&self, i: usize) -> &'a Program {
        &self.sc.clients[i]
    }

    fn finished(&self, i: usize) -> bool {
        self.clients[i].error || self.clients[i].pc >= self.program(i).instrs.len()
    }

    fn all_finished(&self) -> bool {
        (0..self.clients.len()).all(|i| self.finished(i))
    }

    fn runnable(&self, i: usize, exhaustive: bool) -> bool {
        if self.finished(i) {
            return false;
        }
        match &self.program(i).instrs[self.clients[i].pc] {
            Instr::Wait { key, value } | Instr::WeakPoll { key, value } if exhaustive => {
                self.server.peek_latest(key.as_str()).as_ref() == Some(value)
            }
            _ => true,
        }
    }

    fn runnable_set(&self, exhaustive: bool) -> Vec<usize> {
        (0..self.clients.len()).filter(|&i| self.runnable(i, exhaustive)).collect()
    }

    /// Runs the assertions and jumps that follow client `i`'s last step.
    fn settle(&mut self, i: usize) {
        let instrs = &self.sc.clients[i].instrs;
        let c = &mut self.clients[i];
        while let Some(instr) = instrs.get(c.pc) {
            match instr {
                Instr::Assert { label, pred } => {
                    if !pred(&c.env, self.engine) {
                        self.failures.push((label.to_string(), format!("client {i}: {:?}", c.env)));
                    }
                    c.pc += 1;
                }
                Instr::JumpUnless { cond, target } => c.pc = if cond(&c.env) { c.pc + 1 } else { *target },
                _ => break,
            }
        }
    }

    fn step(&mut self, i: usize) {
        self.steps += 1;
        let instr = self.sc.clients[i].instrs[self.clients[i].pc].clone();
        let c = &mut self.clients[i];
        let result = match instr {
            Instr::Start => c.conn.txn_start().map(|_| true),
            Instr::Read { key, into } => c.conn.txn_read(&key).map(|v| {
                c.env.insert(into, v);
                true
            }),
            Instr::Write { key, value } => c.conn.txn_write(key, value.eval(&c.env)).map(|()| true),
            Instr::Commit { must_succeed } => {
                let wrote = matches!(c.conn.state(), crate::client::TxnState::Active { cache, .. } if !cache.is_empty());
                c.conn.txn_commit().map(|ok| {
                    c.commits.push(CommitRecord { wrote, committed: ok });
                    if must_succeed && !ok {
                        self.failures.push(("commit".to_string(), format!("client {i}: commit aborted")));
                    }
                    true
                })
            }
            Instr::Wait { key, value } => c.conn.wait_round(&key, |v| *v == value),
            Instr::WeakBegin => c.conn.weak_wait_begin().map(|()| true),
            Instr::WeakPoll { key, value } => c.conn.weak_wait_poll(&key, |v| *v == value),
            Instr::Assert { .. } | Instr::JumpUnless { .. } => unreachable!("settled eagerly"),
        };
        match result {
            Ok(true) => c.pc += 1,
            Ok(false) => {}
            Err(e) => {
                c.error = true;
                self.failures.push(("client-error".to_string(), format!("client {i}: {e}")));
            }
        }
        self.settle(i);
    }

    fn finish(self, schedule: Vec<usize>, status: RunStatus) -> RunRecord {
        let trace = self.recorder.snapshot(self.engine, self.sc.keys.clone());
        let outcome = RunOutcome {
            envs: self.clients.iter().map(|c| c.env.clone()).collect(),
            commits: self.clients.iter().map(|c| c.commits.clone()).collect(),
            finished: (0..self.clients.len()).map(|i| self.finished(i)).collect(),
            finals: self.sc.keys.iter().map(|k| (k.clone(), self.server.peek_latest(k.as_str()))).collect(),
        };
        let mut failures = self.failures;
        if status == RunStatus::Complete {
            if let Some(f) = self.sc.final_check {
                if let Err(e) = f(&outcome, self.engine) {
                    failures.push((self.sc.name.to_string(), e));
                }
            }
        }
        let mut structural = Vec::new();
        let wf = validate_wellformed(&trace);
        if !wf.is_pass() {
            structural.push(("wellformed".to_string(), wf.to_string()));
        }
        let mono = check_prefix_monotone(&trace);
        if !mono.is_pass() {
            structural.push(("monotone".to_string(), mono.to_string()));
        }
        let verdicts = check_inclusion(&trace);
        if verdicts.violation {
            structural.push(("inclusion".to_string(), format!("{:?}", verdicts)));
        }
        let own = match self.engine {
            EngineKind::Ru => &verdicts.ru,
            EngineKind::Rc => &verdicts.rc,
            EngineKind::Si => &verdicts.si,
        };
        if !own.is_pass() {
            structural.push(("soundness".to_string(), own.to_string()));
        }
        let replay = check_replay(&trace);
        if !replay.is_pass() {
            structural.push(("replay".to_string(), replay.to_string()));
        }
        if let Some(v) = self.server.model_violation() {
            structural.push(("model".to_string(), v.to_string()));
        } else if let v @ crate::verdict::Verdict::Fail { .. } = self.server.debug_check_model() {
            structural.push(("model".to_string(), v.to_string()));
        }
        RunRecord { schedule, status, trace, outcome, assertion_failures: failures, verdicts, structural }
    }
}

/// Depth-first enumeration of every schedule.
pub fn explore_exhaustive(sc: &Scenario, engine: EngineKind, step_bound: usize) -> ExplorationReport {
    explore_exhaustive_with(sc, engine, step_bound, |_| {})
}

pub fn explore_exhaustive_with(
    sc: &Scenario,
    engine: EngineKind,
    step_bound: usize,
    mut on_run: impl FnMut(&RunRecord),
) -> ExplorationReport {
    let mut report = ExplorationReport::new(sc, engine, "exhaustive", None, step_bound);
    // Choice index (into the runnable set) forced at each depth.
    let mut forced: Vec<usize> = Vec::new();
    loop {
        let mut world = World::new(sc, engine);
        let mut choices: Vec<(usize, usize)> = Vec::new();
        let mut schedule = Vec::new();
        let status = loop {
            if world.all_finished() {
                break RunStatus::Complete;
            }
            if world.steps >= step_bound {
                break RunStatus::Bounded;
            }
            let runnable = world.runnable_set(true);
            if runnable.is_empty() {
                break RunStatus::Deadlock;
            }
            let pick = forced.get(choices.len()).copied().unwrap_or(0);
            choices.push((pick, runnable.len()));
            schedule.push(runnable[pick]);
            world.step(runnable[pick]);
        };
        let run = world.finish(schedule, status);
        report.absorb(sc, &run);
        on_run(&run);

        let mut sibling = false;
        while let Some((pick, n)) = choices.pop() {
            if pick + 1 < n {
                forced = choices.iter().map(|c| c.0).collect();
                forced.push(pick + 1);
                sibling = true;
                break;
            }
        }
        if !sibling {
            break;
        }
    }
    report.expected = evaluate_expected(sc, &report).unwrap_or(false);
    report
}

/// `runs` schedules drawn from a generator seeded with `seed`. Every
/// unfinished client is runnable; a wait whose value has not arrived
/// simply polls again.
pub fn explore_random(sc: &Scenario, engine: EngineKind, seed: u64, runs: u64, step_bound: usize) -> ExplorationReport {
    explore_random_with(sc, engine, seed, runs, step_bound, |_| {})
}

pub fn explore_random_with(
    sc: &Scenario,
    engine: EngineKind,
    seed: u64,
    runs: u64,
    step_bound: usize,
    mut on_run: impl FnMut(&RunRecord),
) -> ExplorationReport {
    let mut report = ExplorationReport::new(sc, engine, "random", Some(seed), step_bound);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..runs {
        let mut world = World::new(sc, engine);
        let mut schedule = Vec::new();
        let status = loop {
            if world.all_finished() {
                break RunStatus::Complete;
            }
            if world.steps >= step_bound {
                break RunStatus::Bounded;
            }
            let runnable = world.runnable_set(false);
            let i = runnable[rng.gen_range(0..runnable.len())];
            schedule.push(i);
            world.step(i);
        };
        let run = world.finish(schedule, status);
        report.absorb(sc, &run);
        on_run(&run);
    }
    report.expected = evaluate_expected(sc, &report).unwrap_or(false);
    report
}

/// Re-executes one recorded schedule.
pub fn replay_schedule(sc: &Scenario, engine: EngineKind, schedule: &[usize]) -> Result<RunRecord, HarnessError> {
    let mut world = World::new(sc, engine);
    for (index, &client) in schedule.iter().enumerate() {
        if client >= world.clients.len() || !world.runnable(client, false) {
            return Err(HarnessError::BadSchedule { index, client });
        }
        world.step(client);
    }
    let status = if world.all_finished() {
        RunStatus::Complete
    } else if world.runnable_set(true).is_empty() {
        RunStatus::Deadlock
    } else {
        RunStatus::Bounded
    };
    Ok(world.finish(schedule.to_vec(), status))
}

/// Report over a single replayed schedule.
pub fn replay_report(sc: &Scenario, engine: EngineKind, schedule: &[usize]) -> Result<ExplorationReport, HarnessError> {
    let run = replay_schedule(sc, engine, schedule)?;
    let mut report = ExplorationReport::new(sc, engine, "replay", None, schedule.len());
    report.absorb(sc, &run);
    report.expected = evaluate_expected(sc, &report)?;
    Ok(report)
}

/// A failing schedule saved for later replay.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFile {
    pub scenario: String,
    pub engine: EngineKind,
    pub schedule: Vec<usize>,
}
