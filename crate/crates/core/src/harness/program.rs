//! Client programs as flat instruction lists.
//!
//! Transaction operations and wait polls are scheduling steps. Assertions and
//! conditional jumps are not: they run eagerly right after the step before
//! them, so they never add interleavings.

use std::collections::BTreeMap;

use crate::types::{EngineKind, Key, Value};

/// Local bindings of one client.
pub type Env = BTreeMap<&'static str, Option<Value>>;

pub type Pred = fn(&Env, EngineKind) -> bool;
pub type Cond = fn(&Env) -> bool;

#[derive(Clone, Copy)]
pub enum Expr {
    Const(&'static str),
    Computed(fn(&Env) -> Value),
}

impl Expr {
    pub fn eval(&self, env: &Env) -> Value {
        match self {
            Expr::Const(s) => Value::new(s).expect("scenario constants are valid values"),
            Expr::Computed(f) => f(env),
        }
    }
}

impl std::fmt::Debug for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::Const(s) => write!(f, "{s:?}"),
            Expr::Computed(_) => f.write_str("<computed>"),
        }
    }
}

#[derive(Clone)]
pub enum Instr {
    Start,
    Read { key: Key, into: &'static str },
    Write { key: Key, value: Expr },
    /// With `must_succeed`, an aborted commit is an assertion failure.
    Commit { must_succeed: bool },
    /// One start/read/commit round per step until the key holds `value`.
    Wait { key: Key, value: Value },
    WeakBegin,
    /// One read per step inside the weak wait's transaction; commits once the
    /// key holds `value`.
    WeakPoll { key: Key, value: Value },
    Assert { label: &'static str, pred: Pred },
    JumpUnless { cond: Cond, target: usize },
}

impl Instr {
    /// Whether executing this instruction is a scheduling step.
    pub fn is_step(&self) -> bool {
        !matches!(self, Instr::Assert { .. } | Instr::JumpUnless { .. })
    }
}

impl std::fmt::Debug for Instr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Instr::Start => f.write_str("start"),
            Instr::Read { key, into } => write!(f, "{into} = read {key}"),
            Instr::Write { key, value } => write!(f, "write {key} {value:?}"),
            Instr::Commit { must_succeed: true } => f.write_str("assert commit"),
            Instr::Commit { must_succeed: false } => f.write_str("commit"),
            Instr::Wait { key, value } => write!(f, "wait {key} {value}"),
            Instr::WeakBegin => f.write_str("weak_wait start"),
            Instr::WeakPoll { key, value } => write!(f, "weak_wait {key} {value}"),
            Instr::Assert { label, .. } => write!(f, "assert {label}"),
            Instr::JumpUnless { target, .. } => write!(f, "unless cond goto {target}"),
        }
    }
}

/// A client program. Falling off the end without a commit leaves the open
/// transaction abandoned, which is how non-terminating writers are modelled.
#[derive(Clone, Debug, Default)]
pub struct Program {
    pub instrs: Vec<Instr>,
    /// Bindings present before the first instruction.
    pub init: Vec<(&'static str, Value)>,
}

fn k(name: &str) -> Key {
    Key::new(name).expect("scenario keys are valid")
}

fn v(s: &str) -> Value {
    Value::new(s).expect("scenario values are valid")
}

impl Program {
    pub fn new() -> Self {
        Program::default()
    }

    pub fn bind(mut self, name: &'static str, value: &str) -> Self {
        self.init.push((name, v(value)));
        self
    }

    pub fn start(mut self) -> Self {
        self.instrs.push(Instr::Start);
        self
    }

    pub fn read(mut self, key: &str, into: &'static str) -> Self {
        self.instrs.push(Instr::Read { key: k(key), into });
        self
    }

    pub fn write(mut self, key: &str, value: &'static str) -> Self {
        self.instrs.push(Instr::Write { key: k(key), value: Expr::Const(value) });
        self
    }

    pub fn write_with(mut self, key: &str, f: fn(&Env) -> Value) -> Self {
        self.instrs.push(Instr::Write { key: k(key), value: Expr::Computed(f) });
        self
    }

    pub fn commit(mut self) -> Self {
        self.instrs.push(Instr::Commit { must_succeed: false });
        self
    }

    pub fn assert_commit(mut self) -> Self {
        self.instrs.push(Instr::Commit { must_succeed: true });
        self
    }

    pub fn wait(mut self, key: &str, value: &str) -> Self {
        self.instrs.push(Instr::Wait { key: k(key), value: v(value) });
        self
    }

    pub fn weak_wait(mut self, key: &str, value: &str) -> Self {
        self.instrs.push(Instr::WeakBegin);
        self.instrs.push(Instr::WeakPoll { key: k(key), value: v(value) });
        self
    }

    pub fn assert(mut self, label: &'static str, pred: Pred) -> Self {
        self.instrs.push(Instr::Assert { label, pred });
        self
    }

    /// Runs `body` only when `cond` holds.
    pub fn when(mut self, cond: Cond, body: impl FnOnce(Program) -> Program) -> Self {
        let at = self.instrs.len();
        self.instrs.push(Instr::JumpUnless { cond, target: 0 });
        let mut out = body(self);
        let end = out.instrs.len();
        if let Instr::JumpUnless { target, .. } = &mut out.instrs[at] {
            *target = end;
        }
        out
    }

    /// Number of steps along the straight-line path when every conditional
    /// is taken and every wait succeeds at its first poll.
    pub fn max_steps(&self) -> usize {
        self.instrs.iter().filter(|i| i.is_step()).count()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.instrs.iter().filter_map(|i| match i {
            Instr::Read { key, .. } | Instr::Write { key, .. } | Instr::Wait { key, .. } | Instr::WeakPoll { key, .. } => {
                Some(key)
            }
            _ => None,
        })
    }
}

pub fn get<'a>(env: &'a Env, name: &str) -> Option<&'a Value> {
    env.get(name).and_then(Option::as_ref)
}

/// `name` bound to `Some(s)`.
pub fn is(env: &Env, name: &str, s: &str) -> bool {
    get(env, name).is_some_and(|v| v.as_str() == s)
}

/// Integer reading of a binding; unwritten keys count as 0.
pub fn int(env: &Env, name: &str) -> i64 {
    get(env, name).and_then(Value::as_int).unwrap_or(0)
}
