//! Realtime verifier: credentials, control FSM, per-component algorithm
//! FSMs and the rule table over the collector's event stream.

use super::fsm::{Event, FlowFsm, FsmError, FsmRun, Step};
use super::fsmgen;
use super::rules::{Registry, RuleContext, RuleError, RuleTable};
use super::verdict::{Attack, Locus, Mechanism, Severity, Verdict, VerdictClass};
use crate::collector::{CollectorEvent, JobMetadata, LogicalMessage, Schema, Violation};
use crate::crypto::PublicKey;
use crate::gateway::thread_cpu_ns;
use crate::kms::{self, AccessRecord, KeyKind, KeyPart, Kms, SUPERUSER};
use crate::messages::{FlowLevel, Payload, PayloadKind, VarName};
use crate::parties::{job::paillier_from_secret, JobConfig, MonitorFn};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashSet};
use std::sync::mpsc::Receiver;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

/// Everything the verifier checks against. Built before the job starts.
#[derive(Clone)]
pub struct VerifierSpec {
    pub job_id: String,
    pub control: FlowFsm,
    pub algorithms: BTreeMap<String, FlowFsm>,
    pub rules: RuleTable,
    pub schema: Schema,
    pub intersect_task: Option<String>,
    pub deep_check: bool,
    pub registry: Registry,
}

impl VerifierSpec {
    pub fn for_job(cfg: &JobConfig) -> Result<VerifierSpec, SetupError> {
        VerifierSpec::with_custom(cfg, &[])
    }

    pub fn with_custom(cfg: &JobConfig, custom: &[(String, String)]) -> Result<VerifierSpec, SetupError> {
        let algorithms = fsmgen::algorithm_fsms(cfg);
        let decls: Vec<_> = algorithms.values().flat_map(|f| f.declared_variables.clone()).collect();
        let registry = Registry::default();
        let rules = RuleTable::generate(&decls, custom, &registry)?;
        Ok(VerifierSpec {
            job_id: cfg.job_id.clone(),
            control: fsmgen::control_fsm(cfg)?,
            schema: fsmgen::job_schema(cfg),
            algorithms,
            rules,
            intersect_task: cfg.intersection().map(|(n, _)| n.to_string()),
            deep_check: false,
            registry,
        })
    }
}

/// Timing and counts, also stored on the final verdict.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyStats {
    pub events: u64,
    pub control_events: u64,
    pub algorithm_events: u64,
    pub control_ns: u64,
    pub algorithm_ns: u64,
    pub other_ns: u64,
    pub max_event_ns: u64,
    pub alarms: u64,
}

impl VerifyStats {
    pub fn total_ns(&self) -> u64 {
        self.control_ns + self.algorithm_ns + self.other_ns
    }

    pub fn mean_event_ns(&self) -> f64 {
        if self.events == 0 {
            0.0
        } else {
            self.total_ns() as f64 / self.events as f64
        }
    }
}

pub struct Verifier {
    spec: VerifierSpec,
    control: FsmRun,
    algorithms: BTreeMap<String, FsmRun>,
    stats_env: BTreeMap<String, i64>,
    rules: RuleContext,
    kms: Arc<Kms>,
    good_credentials: HashSet<Vec<u8>>,
    verdicts: Vec<Verdict>,
    stats: VerifyStats,
}

fn msg_locus(m: &LogicalMessage, state: Option<&str>) -> Locus {
    Locus {
        state: state.map(String::from),
        event: Some(format!("{} {}->{} {}", m.flow, m.src, m.dst, m.variable)),
        task: Some(m.task_id.clone()),
        iteration: VarName::parse(&m.variable).map(|v| v.iteration),
        variable: Some(m.variable.clone()),
        ledger_index: m.ledger_indices.first().copied(),
    }
}

impl Verifier {
    pub fn new(spec: VerifierSpec, md: &JobMetadata, kms: Arc<Kms>) -> Verifier {
        let job = spec.job_id.clone();
        let mut env = md.stats.clone();
        if spec.intersect_task.is_none() {
            if let Some(&n) = env.get("n_guest_rows") {
                env.insert("n_rows".into(), n);
            }
        }
        let mut verdicts = Vec::new();
        let paillier = kms.public_part(&kms::key_id(&job, KeyKind::Paillier)).and_then(|(_, b)| {
            let pk = PublicKey::decode(&b).ok()?;
            Some((pk.key_id.clone(), pk.n))
        });
        let rsa_id = kms::key_id(&job, KeyKind::Rsa);
        let rsa = kms.public_part(&rsa_id).map(|(_, b)| (rsa_id.clone(), BigUint::from_bytes_be(&b)));
        let mut secret = None;
        if spec.deep_check {
            let got = kms
                .issue_credential(SUPERUSER, &job)
                .and_then(|c| kms.get_key(&kms::key_id(&job, KeyKind::Paillier), &c, KeyPart::Secret));
            match got.map(|b| paillier_from_secret(&b)) {
                Ok(Ok(sk)) => secret = Some(sk),
                _ => verdicts.push(Verdict::new(&job, VerdictClass::Notice, Mechanism::Rules, Severity::Info, "deep check unavailable, shallow checks only")),
            }
        }
        let rules = RuleContext { job_id: job.clone(), stats: env.clone(), paillier, rsa, secret, registry: spec.registry.clone() };
        Verifier {
            control: FsmRun::new(spec.control.clone(), &env),
            algorithms: BTreeMap::new(),
            stats_env: env,
            rules,
            kms,
            good_credentials: HashSet::new(),
            verdicts,
            stats: VerifyStats::default(),
            spec,
        }
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    fn push(&mut self, mut v: Verdict, m: Option<&LogicalMessage>) {
        if let Some(m) = m {
            v.latency_us = Some(m.collected_at.elapsed().as_micros() as u64);
        }
        if v.is_alarm() {
            self.stats.alarms += 1;
            tracing::warn!(verdict = %v.summary(), "verifier alarm");
        }
        self.verdicts.push(v);
    }

    fn alarm(&self, class: VerdictClass, mech: Mechanism, attack: Option<Attack>, text: String) -> Verdict {
        let v = Verdict::alarm(&self.spec.job_id, class, mech, text);
        match attack {
            Some(a) => v.attack(a),
            None => v,
        }
    }

    fn credential_error(&mut self, m: &LogicalMessage) -> Option<String> {
        if m.credentials.is_empty() {
            return Some("no credential".into());
        }
        let want = kms::principal(&m.src);
        for c in &m.credentials {
            if self.good_credentials.contains(c) {
                continue;
            }
            match self.kms.verify_credential(c) {
                Ok(cl) if cl.job_id == self.spec.job_id && cl.principal == want => {
                    self.good_credentials.insert(c.clone());
                }
                Ok(cl) => return Some(format!("credential of {} for job {} presented by {}", cl.principal, cl.job_id, want)),
                Err(e) => return Some(format!("credential rejected: {e}")),
            }
        }
        None
    }

    pub fn on_message(&mut self, m: &LogicalMessage) {
        let t0 = thread_cpu_ns();
        let control = m.flow == FlowLevel::Control;
        self.check_message(m);
        let dt = thread_cpu_ns().saturating_sub(t0);
        self.stats.events += 1;
        self.stats.max_event_ns = self.stats.max_event_ns.max(dt);
        if control {
            self.stats.control_events += 1;
            self.stats.control_ns += dt;
        } else {
            self.stats.algorithm_events += 1;
            self.stats.algorithm_ns += dt;
        }
    }

    fn check_message(&mut self, m: &LogicalMessage) {
        if let Some(why) = self.credential_error(m) {
            let v = self
                .alarm(VerdictClass::Impersonation, Mechanism::Fsm, Some(Attack::A01), format!("{} from {}: {why}", m.variable, m.src))
                .at(msg_locus(m, Some(self.control.state())));
            self.push(v, Some(m));
            return;
        }
        if m.flow == FlowLevel::Control {
            let ev = Event::from_message(m);
            let step = self.control.step(&ev);
            self.on_step(step, m, Attack::A02);
            return;
        }
        if m.payload.first().map_or(false, |&t| PayloadKind::from_tag(t) == PayloadKind::OpaqueForbidden) {
            if let Some(v) = self.rules.check(&self.spec.rules, m) {
                self.push(v, Some(m));
            }
            return;
        }
        if m.undeclared {
            let state = self.algorithms.get(&m.task_id).map(|r| r.state().to_string());
            let v = self
                .alarm(VerdictClass::UndeclaredVariable, Mechanism::Fsm, Some(Attack::A03), format!("undeclared variable {}", m.variable))
                .at(msg_locus(m, state.as_deref().or(Some(self.control.state()))));
            self.push(v, Some(m));
            return;
        }
        if !self.algorithms.contains_key(&m.task_id) {
            match self.spec.algorithms.get(&m.task_id) {
                Some(f) => {
                    self.algorithms.insert(m.task_id.clone(), FsmRun::new(f.clone(), &self.stats_env));
                }
                None => {
                    let v = self
                        .alarm(VerdictClass::OutOfOrder, Mechanism::Fsm, Some(Attack::A04), format!("message for unknown task {}", m.task_id))
                        .at(msg_locus(m, None));
                    self.push(v, Some(m));
                    return;
                }
            }
        }
        let ev = Event::from_message(m);
        let step = self.algorithms.get_mut(&m.task_id).expect("inserted above").step(&ev);
        self.on_step(step, m, Attack::A04);
        if Some(&m.task_id) == self.spec.intersect_task.as_ref()
            && VarName::parse(&m.variable).is_some_and(|v| v.name == "intersection")
            && !self.rules.stats.contains_key("n_rows")
        {
            if let Ok(p) = Payload::decode(&m.payload) {
                self.rules.stats.insert("n_rows".into(), p.len() as i64);
                self.stats_env.insert("n_rows".into(), p.len() as i64);
            }
        }
        if let Some(v) = self.rules.check(&self.spec.rules, m) {
            self.push(v, Some(m));
        }
    }

    fn on_step(&mut self, step: Step, m: &LogicalMessage, attack: Attack) {
        let job = self.spec.job_id.clone();
        match step {
            Step::Moved { report: Some(level), from, to } => {
                let sev = match level.as_str() {
                    "alarm" => Severity::Alarm,
                    "warning" => Severity::Warning,
                    _ => Severity::Info,
                };
                let v = Verdict::new(&job, VerdictClass::Notice, Mechanism::Fsm, sev, format!("{} moved {from} -> {to}", m.variable))
                    .at(msg_locus(m, Some(&from)));
                self.push(v, Some(m));
            }
            Step::Moved { .. } | Step::Partial => {}
            Step::NoMatch { state, reason } => {
                let v = self
                    .alarm(VerdictClass::OutOfOrder, Mechanism::Fsm, Some(attack), format!("{} from {} in state {state}: {reason}", m.variable, m.src))
                    .at(msg_locus(m, Some(&state)));
                self.push(v, Some(m));
            }
            Step::LoopExceeded { head, count, bound } => {
                let v = self
                    .alarm(VerdictClass::LoopBound, Mechanism::Fsm, Some(attack), format!("loop at {head} entered {count} times, bound {bound}"))
                    .at(msg_locus(m, Some(&head)));
                self.push(v, Some(m));
            }
        }
    }

    pub fn on_violation(&mut self, v: &Violation) {
        let t0 = thread_cpu_ns();
        let (class, text, idx) = match v {
            Violation::IncompleteVariable { variable, received, total, .. } => {
                (VerdictClass::IncompleteVariable, format!("{variable}: {received} of {total} partitions"), None)
            }
            Violation::DuplicatePartition { variable, index, ledger_index, .. } => {
                (VerdictClass::RuleViolation, format!("{variable}: duplicate partition {index}"), *ledger_index)
            }
            Violation::InconsistentPartitionTotal { variable, ledger_index, .. } => {
                (VerdictClass::RuleViolation, format!("{variable}: inconsistent partition total"), *ledger_index)
            }
            Violation::InvalidEnvelope { variable, reason, ledger_index } => {
                (VerdictClass::RuleViolation, format!("{variable}: {reason}"), *ledger_index)
            }
        };
        let verdict = self
            .alarm(class, Mechanism::Collector, None, text)
            .at(Locus { ledger_index: idx, ..Locus::default() });
        self.push(verdict, None);
        self.stats.other_ns += thread_cpu_ns().saturating_sub(t0);
    }

    pub fn on_kms(&mut self, r: &AccessRecord) {
        if r.granted {
            return;
        }
        let v = self
            .alarm(
                VerdictClass::AccessDenied,
                Mechanism::Kms,
                Some(Attack::A08),
                format!("{} denied {} on {}: {}", r.principal, r.action, r.key_id, r.reason),
            )
            .at(Locus { event: Some(format!("{} {}", r.action, r.key_id)), ..Locus::default() });
        self.push(v, None);
    }

    /// Acceptance checks at end of stream plus the summary verdict.
    pub fn finish(mut self) -> (Vec<Verdict>, VerifyStats) {
        let job = self.spec.job_id.clone();
        let mut ends = vec![("control".to_string(), self.control.is_accepting(), self.control.state().to_string(), Attack::A02)];
        for (task, r) in &self.algorithms {
            ends.push((task.clone(), r.is_accepting(), r.state().to_string(), Attack::A04));
        }
        for (name, ok, state, attack) in ends {
            if !ok {
                let v = self
                    .alarm(VerdictClass::Unfinished, Mechanism::Fsm, Some(attack), format!("{name} flow ended in non-accepting state {state}"))
                    .at(Locus { state: Some(state), task: Some(name), ..Locus::default() });
                self.push(v, None);
            }
        }
        let alarms = self.verdicts.iter().filter(|v| v.is_alarm()).count();
        let (class, text) = if alarms == 0 {
            (VerdictClass::Conformant, "conformant".to_string())
        } else {
            (VerdictClass::Notice, format!("{alarms} alarm(s)"))
        };
        let mut summary = Verdict::new(&job, class, Mechanism::Fsm, Severity::Info, text);
        summary.stats = serde_json::to_value(&self.stats).expect("stats json");
        self.verdicts.push(summary);
        (self.verdicts, self.stats)
    }

    pub fn consume(mut self, rx: Receiver<CollectorEvent>) -> (Vec<Verdict>, VerifyStats) {
        for ev in rx.iter() {
            match ev {
                CollectorEvent::Message(m) => self.on_message(&m),
                CollectorEvent::Violation(v, _) => self.on_violation(&v),
                CollectorEvent::KmsAccess(r, _) => self.on_kms(&r),
                CollectorEvent::End => break,
            }
        }
        self.finish()
    }
}

/// Realtime monitor for [`crate::parties::RunOptions`].
pub fn monitor(spec: VerifierSpec, kms: Arc<Kms>) -> MonitorFn {
    Box::new(move |rx, md| {
        let v = Verifier::new(spec, &md, kms);
        let (verdicts, _) = v.consume(rx);
        verdicts.iter().map(Verdict::to_json).collect()
    })
}

/// Parses verdict bodies back, skipping anything malformed.
pub fn parse_verdicts(values: &[Value]) -> Vec<Verdict> {
    values.iter().filter_map(|v| serde_json::from_value(v.clone()).ok()).collect()
}

/// Stats carried by the summary verdict.
pub fn summary_stats(verdicts: &[Verdict]) -> Option<VerifyStats> {
    verdicts
        .iter()
        .rev()
        .find(|v| matches!(v.class, VerdictClass::Conformant | VerdictClass::Notice) && !v.stats.is_null())
        .and_then(|v| serde_json::from_value(v.stats.clone()).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parties::{DatasetSpec, IntersectionKind, NoHooks, RunOptions, TrainKind};

    fn honest(ik: IntersectionKind, tk: TrainKind, deep: bool) -> Vec<Verdict> {
        let mut c = JobConfig::example("vt", ik, tk).with_seed(3);
        c.dataset = DatasetSpec::Explicit { rows: 60, guest_dim: 2, host_dim: 3, seed: 4 };
        c.max_iter = 3;
        c.modulus_bits = 256;
        let mut spec = VerifierSpec::for_job(&c).unwrap();
        spec.deep_check = deep;
        let kms = Kms::shared();
        let dir = tempfile::tempdir().unwrap();
        let out = crate::parties::run_job(
            &c,
            RunOptions {
                job_dir: dir.path().join("j"),
                kms: kms.clone(),
                hooks: Arc::new(NoHooks),
                schema: spec.schema.clone(),
                monitor: Some(monitor(spec, kms)),
            },
        )
        .unwrap();
        parse_verdicts(&out.verdicts)
    }

    #[test]
    fn honest_jobs_are_conformant() {
        for ik in [IntersectionKind::Raw, IntersectionKind::Rsa] {
            for tk in [TrainKind::HeteroLr, TrainKind::SecureboostLite] {
                let vs = honest(ik, tk, false);
                let alarms: Vec<_> = vs.iter().filter(|v| v.is_alarm()).map(|v| v.summary()).collect();
                assert!(alarms.is_empty(), "{ik:?} {tk:?}: {alarms:?}");
                let last = vs.last().unwrap();
                assert_eq!(last.class, VerdictClass::Conformant);
                let st = summary_stats(&vs).unwrap();
                assert!(st.control_events > 0 && st.algorithm_events > 0);
            }
        }
    }

    #[test]
    fn deep_mode_fetches_secret() {
        let vs = honest(IntersectionKind::Raw, TrainKind::HeteroLr, true);
        assert!(vs.iter().all(|v| !v.is_alarm()), "{:?}", vs.iter().map(|v| v.summary()).collect::<Vec<_>>());
        assert!(!vs.iter().any(|v| v.message.contains("deep check unavailable")));
    }
}
