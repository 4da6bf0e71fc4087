//! `isokv serve | explore | check`.
//!
//! Exit codes: 0 pass, 1 semantic failure, 2 runtime fault, 3 model-invariant
//! violation, 64 usage error, 65 bad input data. Reports go to stdout as JSON,
//! summaries to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use isokv::checker::{check, check_inclusion, IsolationLevel};
use isokv::harness::{
    self, explore_exhaustive_with, explore_random_with, scenarios, ExplorationReport, ReplayFile, RunRecord,
    DEFAULT_STEP_BOUND,
};
use isokv::trace::{Trace, TraceError};
use isokv::transport::{ServeOutcome, TcpServer};
use isokv::{EngineKind, Key, Server, ServerConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

/// Traces written per explore invocation, separately for all runs and for failing runs.
pub const MAX_EMITTED_TRACES: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "isokv", version, about = "Transactional key-value store, isolation checker and interleaving explorer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Serve the line protocol over TCP until interrupted.
    Serve {
        #[arg(long, value_parser = parse_engine)]
        engine: EngineKind,
        #[arg(long, default_value = "127.0.0.1:7001")]
        listen: String,
        /// Check the server's shadow model after every request.
        #[arg(long)]
        debug_model: bool,
        /// Keys created with empty histories, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_key)]
        keys: Vec<Key>,
        /// Keep at most this many outstanding snapshots in the shadow model.
        #[arg(long)]
        max_snapshots: Option<usize>,
    },
    /// Explore the interleavings of a litmus scenario.
    Explore {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_parser = parse_engine)]
        engine: Option<EngineKind>,
        #[arg(long, value_enum, default_value_t = ModeArg::Exhaustive)]
        mode: ModeArg,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        runs: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_BOUND)]
        step_bound: usize,
        /// Write traces and failing schedules into this directory.
        #[arg(long)]
        emit_traces: Option<PathBuf>,
        /// Re-run one schedule from a replay file instead of exploring.
        #[arg(long, conflicts_with_all = ["scenario", "engine"])]
        replay: Option<PathBuf>,
    },
    /// Check a trace file against an isolation level.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_parser = parse_level)]
        level: Option<IsolationLevel>,
        /// Report all three levels and whether a stronger one passed where a weaker failed.
        #[arg(long)]
        inclusion: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exhaustive,
    Random,
}

fn parse_engine(s: &str) -> Result<EngineKind, String> {
    s.parse().map_err(|e: isokv::CoreError| e.to_string())
}

fn parse_level(s: &str) -> Result<IsolationLevel, String> {
    s.parse().map_err(|e: isokv::CoreError| e.to_string())
}

fn parse_key(s: &str) -> Result<Key, String> {
    Key::new(s).map_err(|e| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match cli.command {
        Command::Serve { engine, listen, debug_model, keys, max_snapshots } => {
            serve(engine, &listen, ServerConfig { debug_model, max_snapshots }, &keys)
        }
        Command::Explore { scenario, engine, mode, seed, runs, step_bound, emit_traces, replay } => {
            if let Some(path) = replay {
                return explore_replay(&path);
            }
            let (Some(name), Some(engine)) = (scenario, engine) else {
                eprintln!("explore needs --scenario and --engine (or --replay)");
                return EXIT_USAGE;
            };
            let Some(sc) = scenarios::by_name(&name) else {
                eprintln!("unknown scenario {name:?}; known: {}", scenarios::NAMES.join(", "));
                return EXIT_USAGE;
            };
            let mode = match mode {
                ModeArg::Exhaustive => harness::Mode::Exhaustive,
                ModeArg::Random => harness::Mode::Random { seed, runs },
            };
            explore(&sc, engine, mode, step_bound, emit_traces.as_deref())
        }
        Command::Check { trace, level, inclusion } => check_trace(&trace, level, inclusion),
    }
}

fn serve(engine: EngineKind, listen: &str, config: ServerConfig, keys: &[Key]) -> i32 {
    let server = Arc::new(Server::new(engine, keys, config));
    let tcp = match TcpServer::bind(listen, server) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot listen on {listen}: {e}");
            return EXIT_RUNTIME;
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        eprintln!("cannot install interrupt handler: {e}");
        return EXIT_RUNTIME;
    }
    if let Ok(addr) = tcp.local_addr() {
        eprintln!("isokv {engine} engine listening on {addr}");
    }
    serve_until(tcp, move || stop.load(Ordering::SeqCst))
}

/// Runs the accept loop and maps its outcome to an exit code.
pub fn serve_until(tcp: TcpServer, stop: impl Fn() -> bool) -> i32 {
    match tcp.serve_until(stop) {
        Ok(ServeOutcome::Stopped) => EXIT_PASS,
        Ok(ServeOutcome::ModelViolation(v)) => {
            eprintln!("model invariant violated: {v}");
            EXIT_MODEL
        }
        Err(e) => {
            eprintln!("server error: {e}");
            EXIT_RUNTIME
        }
    }
}

struct Emitter<'a> {
    dir: &'a Path,
    scenario: &'a str,
    runs: usize,
    failures: usize,
    error: Option<std::io::Error>,
}

impl Emitter<'_> {
    fn emit(&mut self, run: &RunRecord, index: usize) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.try_emit(run, index) {
            self.error = Some(e);
        }
    }

    fn try_emit(&mut self, run: &RunRecord, index: usize) -> std::io::Result<()> {
        let as_io = |e: TraceError| match e {
            TraceError::Io(e) => e,
            other => std::io::Error::other(other.to_string()),
        };
        if self.runs < MAX_EMITTED_TRACES {
            self.runs += 1;
            run.trace.save(self.dir.join(format!("run-{index:06}.jsonl"))).map_err(as_io)?;
        }
        let failed = !run.assertion_failures.is_empty() || !run.structural.is_empty();
        if failed && self.failures < MAX_EMITTED_TRACES {
            self.failures += 1;
            run.trace.save(self.dir.join(format!("fail-{index:06}.jsonl"))).map_err(as_io)?;
            let replay = ReplayFile {
                scenario: self.scenario.to_string(),
                engine: run.trace.engine,
                schedule: run.schedule.clone(),
            };
            let body = serde_json::to_string(&replay).map_err(std::io::Error::other)?;
            fs::write(self.dir.join(format!("fail-{index:06}.replay.json")), body + "\n")?;
        }
        Ok(())
    }
}

fn explore(sc: &harness::Scenario, engine: EngineKind, mode: harness::Mode, step_bound: usize, emit: Option<&Path>) -> i32 {
    if let Some(dir) = emit {
        if let Err(e) = fs::create_dir_all(dir) {
            eprintln!("cannot create {}: {e}", dir.display());
            return EXIT_RUNTIME;
        }
    }
    let mut emitter = emit.map(|dir| Emitter { dir, scenario: sc.name, runs: 0, failures: 0, error: None });
    let mut index = 0usize;
    let on_run = |run: &RunRecord| {
        index += 1;
        if let Some(em) = emitter.as_mut() {
            em.emit(run, index);
        }
    };
    let report = match mode {
        harness::Mode::Exhaustive => explore_exhaustive_with(sc, engine, step_bound, on_run),
        harness::Mode::Random { seed, runs } => explore_random_with(sc, engine, seed, runs, step_bound, on_run),
    };
    if let Some(Some(e)) = emitter.map(|em| em.error) {
        eprintln!("cannot write traces: {e}");
        return EXIT_RUNTIME;
    }
    finish_report(&report)
}

fn finish_report(report: &ExplorationReport) -> i32 {
    println!("{}", serde_json::to_string_pretty(report).expect("reports serialize"));
    eprintln!(
        "{} on {}: {} interleavings ({} inconclusive), {} with failed assertions, expected outcome {}",
        report.scenario,
        report.engine,
        report.interleavings,
        report.inconclusive,
        report.assertion_failures,
        if report.expected { "met" } else { "NOT met" }
    );
    if report.structural.get("model").is_some_and(|n| *n > 0) {
        return EXIT_MODEL;
    }
    if report.expected {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn explore_replay(path: &Path) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
    };
    let file: ReplayFile = match serde_json::from_str(&text) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{}: line {}: {e}", path.display(), e.line());
            return EXIT_DATA;
        }
    };
    let Some(sc) = scenarios::by_name(&file.scenario) else {
        eprintln!("replay file names unknown scenario {:?}", file.scenario);
        return EXIT_DATA;
    };
    match harness::replay_report(&sc, file.engine, &file.schedule) {
        Ok(report) => finish_report(&report),
        Err(e) => {
            eprintln!("{e}");
            EXIT_DATA
        }
    }
}

fn check_trace(path: &Path, level: Option<IsolationLevel>, inclusion: bool) -> i32 {
    if level.is_none() && !inclusion {
        eprintln!("check needs --level or --inclusion");
        return EXIT_USAGE;
    }
    let trace = match Trace::load(path) {
        Ok(t) => t,
        Err(TraceError::Io(e)) => {
            eprintln!("cannot read {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_DATA;
        }
    };
    if inclusion {
        let report = check_inclusion(&trace);
        println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
        eprintln!("ru {}, rc {}, si {}, violation {}", report.ru, report.rc, report.si, report.violation);
        let level_ok = match level {
            None => true,
            Some(IsolationLevel::Ru) => report.ru.is_pass(),
            Some(IsolationLevel::Rc) => report.rc.is_pass(),
            Some(IsolationLevel::Si) => report.si.is_pass(),
        };
        return if level_ok && !report.violation { EXIT_PASS } else { EXIT_FAIL };
    }
    let level = level.expect("checked above");
    let verdict = check(&trace, level);
    println!("{}", serde_json::to_string_pretty(&verdict).expect("verdicts serialize"));
    eprintln!("{level}: {verdict}");
    if verdict.is_pass() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}
