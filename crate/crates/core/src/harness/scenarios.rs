//! The litmus programs. Integers are decimal strings; unwritten keys read as none.

use super::program::{get, int, is, Env, Program};
use super::RunOutcome;
use crate::types::{EngineKind, Key, Value};

pub type FinalCheck = fn(&RunOutcome, EngineKind) -> Result<(), String>;

/// An outcome that exhaustive exploration on `engines` must reach at least once.
#[derive(Clone)]
pub struct Witness {
    pub label: &'static str,
    pub engines: &'static [EngineKind],
    pub holds: fn(&RunOutcome) -> bool,
}

#[derive(Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub keys: Vec<Key>,
    /// Committed by a separate connection before any client runs.
    pub setup: Vec<(Key, Value)>,
    pub clients: Vec<Program>,
    /// Side condition over each completed run.
    pub final_check: Option<FinalCheck>,
    pub witnesses: Vec<Witness>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("keys", &self.keys)
            .field("clients", &self.clients)
            .finish_non_exhaustive()
    }
}

pub const NAMES: [&str; 15] = [
    "read-uncommitted-data",
    "read-own-data",
    "dirty-read",
    "commit-order",
    "write-skew",
    "read-skew",
    "non-repeatable-read",
    "bank-transfer",
    "atomic-transactions",
    "convenience-of-points-to",
    "disjoint-writes",
    "read-only-commit",
    "difference",
    "capturing-causality",
    "sequential-writes-commit",
];

fn keys(names: &[&str]) -> Vec<Key> {
    names.iter().map(|n| Key::new(n).expect("valid key")).collect()
}

fn base(name: &'static str, key_names: &[&str], clients: Vec<Program>) -> Scenario {
    Scenario { name, keys: keys(key_names), setup: Vec::new(), clients, final_check: None, witnesses: Vec::new() }
}

fn none_or_one(env: &Env, _: EngineKind) -> bool {
    get(env, "vx").is_none() || is(env, "vx", "1")
}

/// A writer that never commits.
fn stuck_writer() -> Program {
    Program::new().start().write("x", "1")
}

pub fn by_name(name: &str) -> Option<Scenario> {
    let sc = match name {
        "read-uncommitted-data" => {
            let mut sc = base(
                "read-uncommitted-data",
                &["x"],
                vec![
                    stuck_writer(),
                    Program::new().start().read("x", "vx").assert("vx is none or 1", none_or_one).commit(),
                ],
            );
            sc.witnesses = vec![
                Witness { label: "vx=none", engines: &[EngineKind::Ru], holds: |o| get(&o.envs[1], "vx").is_none() },
                Witness { label: "vx=1", engines: &[EngineKind::Ru], holds: |o| is(&o.envs[1], "vx", "1") },
            ];
            sc
        }
        "read-own-data" => base(
            "read-own-data",
            &["x"],
            vec![
                Program::new().start().write("x", "1").commit(),
                Program::new()
                    .start()
                    .write("x", "2")
                    .read("x", "vx")
                    .assert("vx = 2", |e, _| is(e, "vx", "2"))
                    .commit(),
            ],
        ),
        "dirty-read" => {
            let mut sc = base(
                "dirty-read",
                &["x"],
                vec![
                    stuck_writer(),
                    Program::new()
                        .start()
                        .read("x", "vx")
                        .assert("vx is none (vx is none or 1 under ru)", |e, engine| match engine {
                            EngineKind::Ru => none_or_one(e, engine),
                            _ => get(e, "vx").is_none(),
                        })
                        .commit(),
                ],
            );
            sc.witnesses =
                vec![Witness { label: "vx=1", engines: &[EngineKind::Ru], holds: |o| is(&o.envs[1], "vx", "1") }];
            sc
        }
        "commit-order" => base(
            "commit-order",
            &["x", "y", "a", "b"],
            vec![
                Program::new()
                    .start()
                    .write("x", "1")
                    .read("y", "vy")
                    .when(|e| is(e, "vy", "1"), |p| p.write("a", "1"))
                    .commit(),
                Program::new()
                    .start()
                    .write("y", "1")
                    .read("x", "vx")
                    .when(|e| is(e, "vx", "1"), |p| p.write("b", "1"))
                    .commit(),
                Program::new()
                    .start()
                    .read("a", "va")
                    .read("b", "vb")
                    .assert("not (va = 1 and vb = 1)", |e, _| !(is(e, "va", "1") && is(e, "vb", "1")))
                    .commit(),
            ],
        ),
        "write-skew" => base(
            "write-skew",
            &["x", "y"],
            vec![
                Program::new().start().read("y", "vy").write("x", "1").assert_commit(),
                Program::new().start().read("x", "vx").write("y", "1").assert_commit(),
            ],
        ),
        "read-skew" => base(
            "read-skew",
            &["x", "y"],
            vec![
                Program::new().start().write("x", "1").write("y", "1").assert_commit(),
                Program::new()
                    .start()
                    .read("x", "vx")
                    .read("y", "vy")
                    .assert("vx = vy", |e, _| get(e, "vx") == get(e, "vy"))
                    .assert_commit(),
            ],
        ),
        "non-repeatable-read" => base(
            "non-repeatable-read",
            &["x"],
            vec![
                Program::new().start().write("x", "1").assert_commit(),
                Program::new()
                    .start()
                    .read("x", "v1")
                    .read("x", "v2")
                    .assert("v1 = v2", |e, _| get(e, "v1") == get(e, "v2"))
                    .assert_commit(),
            ],
        ),
        "bank-transfer" => {
            let transfer = |amount: &str| {
                Program::new()
                    .bind("amount", amount)
                    .start()
                    .read("src", "bal_src")
                    .when(
                        |e| int(e, "bal_src") >= int(e, "amount"),
                        |p| {
                            p.write_with("src", |e| Value::from_int(int(e, "bal_src") - int(e, "amount")))
                                .read("dst", "bal_dst")
                                .write_with("dst", |e| Value::from_int(int(e, "bal_dst") + int(e, "amount")))
                        },
                    )
                    .commit()
            };
            let mut sc = base("bank-transfer", &["src", "dst"], vec![transfer("6"), transfer("7")]);
            sc.setup = vec![(Key::new("src").unwrap(), Value::from_int(10)), (Key::new("dst").unwrap(), Value::from_int(0))];
            sc.final_check = Some(bank_check);
            sc
        }
        "atomic-transactions" => base(
            "atomic-transactions",
            &["x", "y"],
            vec![
                Program::new().start().write("x", "1").write("y", "1").commit(),
                Program::new().start().write("x", "2").write("y", "2").commit(),
                Program::new()
                    .start()
                    .read("x", "vx")
                    .read("y", "vy")
                    .assert("vx = vy", |e, _| get(e, "vx") == get(e, "vy"))
                    .assert_commit(),
            ],
        ),
        "convenience-of-points-to" => {
            let mut sc = base(
                "convenience-of-points-to",
                &["x", "y"],
                vec![
                    Program::new().start().write("x", "1").commit(),
                    // f is the identity on the value read.
                    Program::new()
                        .start()
                        .read("x", "r")
                        .write_with("y", |e| get(e, "r").cloned().unwrap_or_else(|| Value::from_int(0)))
                        .commit(),
                ],
            );
            sc.setup = vec![(Key::new("x").unwrap(), Value::from_int(0))];
            sc
        }
        "disjoint-writes" => base(
            "disjoint-writes",
            &["x", "y"],
            vec![
                Program::new().start().write("x", "1").assert_commit(),
                Program::new().start().write("y", "1").assert_commit(),
            ],
        ),
        "read-only-commit" => base(
            "read-only-commit",
            &["x"],
            vec![
                Program::new().start().write("x", "1").commit(),
                Program::new().start().read("x", "vx").assert_commit(),
            ],
        ),
        "difference" => {
            let mut sc = base(
                "difference",
                &["x", "y", "z"],
                vec![
                    Program::new().start().write("x", "1").write("y", "1").write("z", "1").commit(),
                    Program::new()
                        .wait("z", "1")
                        .start()
                        .read("x", "vx")
                        .when(|e| is(e, "vx", "1"), |p| p.write("y", "-1"))
                        .commit(),
                    Program::new()
                        .wait("z", "1")
                        .start()
                        .read("y", "vy")
                        .when(|e| is(e, "vy", "1"), |p| p.write("x", "-1"))
                        .commit(),
                    Program::new()
                        .wait("z", "1")
                        .start()
                        .read("x", "vx")
                        .read("y", "vy")
                        .assert("vx + vy = -2 or vx + vy >= 0", |e, _| {
                            let s = int(e, "vx") + int(e, "vy");
                            s == -2 || s >= 0
                        })
                        .commit(),
                ],
            );
            sc.witnesses = vec![Witness {
                label: "vx+vy=-2",
                engines: &[EngineKind::Si],
                holds: |o| o.finished[3] && int(&o.envs[3], "vx") + int(&o.envs[3], "vy") == -2,
            }];
            sc
        }
        "capturing-causality" => base(
            "capturing-causality",
            &["x", "y"],
            vec![
                Program::new().start().write("x", "1").commit(),
                Program::new().wait("x", "1").start().write("y", "1").commit(),
                Program::new()
                    .wait("y", "1")
                    .start()
                    .read("x", "vx")
                    .assert("vx = 1", |e, _| is(e, "vx", "1"))
                    .commit(),
            ],
        ),
        "sequential-writes-commit" => base(
            "sequential-writes-commit",
            &["x"],
            vec![
                Program::new().start().write("x", "1").assert_commit(),
                Program::new().wait("x", "1").start().write("x", "2").assert_commit(),
            ],
        ),
        _ => return None,
    };
    Some(sc)
}

pub fn all() -> Vec<Scenario> {
    NAMES.iter().map(|n| by_name(n).expect("every listed scenario exists")).collect()
}

fn bank_check(o: &RunOutcome, engine: EngineKind) -> Result<(), String> {
    let bal = |k: &str| o.finals.get(k).cloned().flatten().and_then(|v| v.as_int()).unwrap_or(0);
    let (src, dst) = (bal("src"), bal("dst"));
    if src + dst != 10 {
        return Err(format!("balances sum to {} (src {src}, dst {dst}), expected 10", src + dst));
    }
    if src < 0 || dst < 0 {
        return Err(format!("negative balance (src {src}, dst {dst})"));
    }
    let transferred = o.commits.iter().filter(|c| c.iter().any(|r| r.wrote && r.committed)).count();
    if engine == EngineKind::Si && transferred > 1 {
        return Err("both conflicting transfers committed".into());
    }
    Ok(())
}
