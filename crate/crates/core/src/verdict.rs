use std::fmt;

use serde::{Deserialize, Serialize};

/// Outcome of a check over a trace or a server model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail {
        /// Index into the trace's event list, when the failure is tied to one event.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event: Option<usize>,
        rule: String,
        explanation: String,
    },
}

impl Verdict {
    pub fn fail(event: Option<usize>, rule: &str, explanation: impl Into<String>) -> Self {
        Verdict::Fail {
            event,
            rule: rule.to_string(),
            explanation: explanation.into(),
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn rule(&self) -> Option<&str> {
        match self {
            Verdict::Pass => None,
            Verdict::Fail { rule, .. } => Some(rule),
        }
    }

    pub fn event(&self) -> Option<usize> {
        match self {
            Verdict::Pass => None,
            Verdict::Fail { event, .. } => *event,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Fail { event: Some(i), rule, explanation } => {
                write!(f, "fail [{rule}] at event {i}: {explanation}")
            }
            Verdict::Fail { event: None, rule, explanation } => {
                write!(f, "fail [{rule}]: {explanation}")
            }
        }
    }
}
