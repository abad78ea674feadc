//! Conformance checking (realtime) and deterministic replay (postponed).

pub mod expr;
pub mod fsm;
pub mod fsmgen;
pub mod overhead;
pub mod plot;
pub mod replay;
pub mod rules;
pub mod verdict;
pub mod verifier;

pub use fsm::{Event, EventPattern, FlowFsm, FsmError, FsmRun, Step};
pub use rules::{Registry, RuleContext, RuleTable};
pub use verdict::{Attack, Locus, Mechanism, Severity, Verdict, VerdictClass};
pub use verifier::{monitor, Verifier, VerifierSpec, VerifyStats};
pub use replay::{replay, Divergence, OverheadReport, ReplayOutcome};
