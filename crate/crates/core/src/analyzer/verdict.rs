use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Alarm,
}

/// Threat model labels. Attached to verdicts as best-effort candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attack {
    A01,
    A02,
    A03,
    A04,
    A05,
    A06,
    A07,
    A08,
}

impl Attack {
    pub const ALL: [Attack; 8] =
        [Attack::A01, Attack::A02, Attack::A03, Attack::A04, Attack::A05, Attack::A06, Attack::A07, Attack::A08];

    pub fn parse(s: &str) -> Option<Attack> {
        Attack::ALL.into_iter().find(|a| a.to_string().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictClass {
    Conformant,
    /// Bad or missing credential.
    Impersonation,
    UndeclaredVariable,
    OutOfOrder,
    LoopBound,
    /// Stream ended outside an accepting state.
    Unfinished,
    IncompleteVariable,
    RuleViolation,
    ForbiddenPayload,
    AccessDenied,
    ChainTamper,
    ReplayDivergence,
    CodeMismatch,
    DataMismatch,
    ModelMismatch,
    Notice,
}

/// Which part of the analyzer produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Fsm,
    Rules,
    Replay,
    Kms,
    Collector,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mechanism::Fsm => "fsm",
            Mechanism::Rules => "rules",
            Mechanism::Replay => "replay",
            Mechanism::Kms => "kms",
            Mechanism::Collector => "collector",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locus {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger_index: Option<u64>,
}

impl Locus {
    pub fn is_empty(&self) -> bool {
        *self == Locus::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub job_id: String,
    pub class: VerdictClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<Attack>,
    pub mechanism: Mechanism,
    pub severity: Severity,
    pub locus: Locus,
    pub message: String,
    /// Microseconds from collection to detection (realtime only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub stats: serde_json::Value,
}

impl Verdict {
    pub fn new(job_id: &str, class: VerdictClass, mechanism: Mechanism, severity: Severity, message: impl Into<String>) -> Self {
        Verdict {
            job_id: job_id.to_string(),
            class,
            attack: None,
            mechanism,
            severity,
            locus: Locus::default(),
            message: message.into(),
            latency_us: None,
            stats: serde_json::Value::Null,
        }
    }

    pub fn alarm(job_id: &str, class: VerdictClass, mechanism: Mechanism, message: impl Into<String>) -> Self {
        Verdict::new(job_id, class, mechanism, Severity::Alarm, message)
    }

    pub fn attack(mut self, a: Attack) -> Self {
        self.attack = Some(a);
        self
    }

    pub fn at(mut self, locus: Locus) -> Self {
        self.locus = locus;
        self
    }

    pub fn is_alarm(&self) -> bool {
        self.severity == Severity::Alarm
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("verdict json")
    }

    pub fn summary(&self) -> String {
        let attack = self.attack.map(|a| format!(" [{a}]")).unwrap_or_default();
        format!("{:?} {:?}{attack} via {}: {}", self.severity, self.class, self.mechanism, self.message)
    }
}

pub fn alarms(vs: &[Verdict]) -> impl Iterator<Item = &Verdict> {
    vs.iter().filter(|v| v.is_alarm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let v = Verdict::alarm("j", VerdictClass::UndeclaredVariable, Mechanism::Fsm, "extra")
            .attack(Attack::A03)
            .at(Locus { task: Some("train".into()), iteration: Some(2), ..Locus::default() });
        let back: Verdict = serde_json::from_value(v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.to_json()["class"], "undeclared_variable");
        assert_eq!(Attack::parse("a06"), Some(Attack::A06));
        assert!(Severity::Alarm > Severity::Warning);
    }
}
