//! FSM generation: control flow from the DAG, algorithm flow from shipped
//! configs or from a trusted trace.

use super::fsm::{Event, EventKind, EventPattern, FlowFsm, FsmError, FsmRun, IterBind, LoopSpec, Step, Transition, VariableDecl};
use crate::collector::{LogicalMessage, Schema};
use crate::messages::{FlowLevel, Payload, PayloadKind};
use crate::parties::{
    load_dataset, run_in_memory, ComponentKind, DatasetSpec, IntersectionKind, JobConfig, JobError, TrainKind,
};
use std::collections::BTreeMap;

pub const PSI_RAW: &str = include_str!("../../configs/fsm/psi_raw.json");
pub const PSI_RSA: &str = include_str!("../../configs/fsm/psi_rsa.json");
pub const HETERO_LR: &str = include_str!("../../configs/fsm/hetero_lr.json");
pub const SECUREBOOST_LITE: &str = include_str!("../../configs/fsm/secureboost_lite.json");

/// Shipped algorithm FSM for a component kind, task still `*`.
pub fn template(kind: ComponentKind) -> FlowFsm {
    let src = match kind {
        ComponentKind::Intersection(IntersectionKind::Raw) => PSI_RAW,
        ComponentKind::Intersection(IntersectionKind::Rsa) => PSI_RSA,
        ComponentKind::Train(TrainKind::HeteroLr) => HETERO_LR,
        ComponentKind::Train(TrainKind::SecureboostLite) => SECUREBOOST_LITE,
    };
    FlowFsm::from_json(src).expect("shipped fsm config is valid")
}

/// Per-component algorithm FSMs bound to their task names.
pub fn algorithm_fsms(cfg: &JobConfig) -> BTreeMap<String, FlowFsm> {
    cfg.dag.iter().map(|c| (c.name.clone(), template(c.kind).bind_task(&c.name))).collect()
}

/// Declared transfer variables of the whole job.
pub fn job_schema(cfg: &JobConfig) -> Schema {
    let mut s = Schema::default();
    for f in algorithm_fsms(cfg).values() {
        s.extend(&f.schema());
    }
    s
}

fn ctl(variable: &str, task: &str, src: &str, dst: &[&str]) -> EventPattern {
    EventPattern {
        flow: FlowLevel::Control,
        task: task.into(),
        variable: variable.into(),
        src: src.into(),
        dst: dst.iter().map(|d| d.to_string()).collect(),
        kind: if dst.len() > 1 { EventKind::AssemblyComplete } else { EventKind::Single },
        iteration: IterBind::Any,
        flag: None,
    }
}

fn running_bound(kind: ComponentKind) -> &'static str {
    match kind {
        ComponentKind::Intersection(_) => "1",
        ComponentKind::Train(TrainKind::HeteroLr) => "max_iter + 1",
        ComponentKind::Train(TrainKind::SecureboostLite) => "max_internal_nodes + 1",
    }
}

/// Control FSM. Components run in topological order, so `start(c)` is only
/// enabled once every earlier component (all DAG predecessors among them)
/// is completed.
pub fn control_fsm(cfg: &JobConfig) -> Result<FlowFsm, FsmError> {
    let order = cfg.topo_order().map_err(|msg| FsmError::Invalid { name: "control".into(), msg })?;
    const BOTH: &[&str] = &["guest", "host"];
    let mut states = vec!["Idle".to_string(), "Submitted".to_string()];
    let mut transitions = Vec::new();
    let mut loops = Vec::new();
    let t = |from: &str, event: EventPattern, to: &str, report: Option<&str>| Transition {
        from: from.into(),
        event,
        to: to.into(),
        report: report.map(String::from),
    };
    transitions.push(t("Idle", ctl("submit_job", "job", "coordinator", BOTH), "Submitted", None));
    let mut prev = "Submitted".to_string();
    for c in &order {
        let running = format!("Running({})", c.name);
        let done = format!("Completed({})", c.name);
        states.push(running.clone());
        states.push(done.clone());
        transitions.push(t(&prev, ctl("start", &c.name, "coordinator", BOTH), &running, None));
        transitions.push(t(&running, ctl("progress", &c.name, "guest", &["coordinator"]), &running, None));
        transitions.push(t(&running, ctl("complete", &c.name, "guest", &["coordinator"]), &done, None));
        transitions.push(t(&running, ctl("abort", &c.name, "*", &["coordinator"]), "Aborting", Some("warning")));
        transitions.push(t(&running, ctl("stop", "job", "coordinator", BOTH), "Stopped", Some("warning")));
        transitions.push(t(&done, ctl("stop", "job", "coordinator", BOTH), "Stopped", None));
        loops.push(LoopSpec { head: running, bound: running_bound(c.kind).into() });
        prev = done;
    }
    if order.is_empty() {
        transitions.push(t("Submitted", ctl("stop", "job", "coordinator", BOTH), "Stopped", None));
    }
    transitions.push(t(&prev, ctl("job_complete", "job", "coordinator", BOTH), "JobComplete", None));
    transitions.push(t("Aborting", ctl("abort", "*", "*", &["coordinator"]), "Aborting", None));
    transitions.push(t("Aborting", ctl("stop", "job", "coordinator", BOTH), "Stopped", None));
    loops.push(LoopSpec { head: "Aborting".into(), bound: "2".into() });
    states.extend(["JobComplete", "Stopped", "Aborting"].map(String::from));
    let f = FlowFsm {
        name: "control".into(),
        states,
        initial: "Idle".into(),
        accepting: vec!["JobComplete".into(), "Stopped".into()],
        transitions,
        loops,
        declared_variables: vec![],
    };
    f.validate()?;
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Token {
    flow: FlowLevel,
    name: String,
    src: String,
    dst: String,
    flag: Option<u8>,
}

impl Token {
    fn of(e: &Event) -> Token {
        Token { flow: e.flow, name: e.name.clone(), src: e.src.to_string(), dst: e.dst.to_string(), flag: e.flag }
    }

    fn pattern(&self) -> EventPattern {
        EventPattern {
            flow: self.flow,
            task: "*".into(),
            variable: self.name.clone(),
            src: self.src.clone(),
            dst: vec![self.dst.clone()],
            kind: EventKind::Single,
            iteration: IterBind::Any,
            flag: self.flag,
        }
    }
}

/// Longest repeated run: `(start, period, run length)`.
fn best_period(t: &[Token]) -> Option<(usize, usize, usize)> {
    let n = t.len();
    let mut best: Option<(usize, usize, usize)> = None;
    for p in 1..n {
        for s in 0..n - p {
            let mut l = 0;
            while s + p + l < n && t[s + l] == t[s + p + l] {
                l += 1;
            }
            if 2 * l < p || l == 0 {
                continue;
            }
            if best.map_or(true, |(_, _, bl)| l > bl) {
                best = Some((s, p, l));
            }
        }
    }
    best
}

struct Builder {
    states: Vec<String>,
    transitions: Vec<Transition>,
}

impl Builder {
    fn new_state(&mut self) -> String {
        let s = format!("s{}", self.states.len());
        self.states.push(s.clone());
        s
    }

    fn follow(&self, from: &str, tok: &Token) -> Option<String> {
        self.transitions.iter().find(|t| t.from == from && t.event == tok.pattern()).map(|t| t.to.clone())
    }

    fn add(&mut self, from: &str, tok: &Token, to: &str) {
        self.transitions.push(Transition { from: from.into(), event: tok.pattern(), to: to.into(), report: None });
    }

    /// Walks existing edges where possible and branches off where not.
    fn insert(&mut self, mut at: String, toks: &[Token]) -> String {
        for tok in toks {
            at = match self.follow(&at, tok) {
                Some(next) => next,
                None => {
                    let next = self.new_state();
                    self.add(&at, tok, &next);
                    next
                }
            };
        }
        at
    }
}

const LENGTH_NAMES: [&str; 7] =
    ["n_rows", "n_guest_rows", "n_host_rows", "n_guest_features", "n_host_features", "n_bins", "max_iter"];

fn infer_length(len: usize, stats: &BTreeMap<String, i64>) -> String {
    for name in LENGTH_NAMES {
        if stats.get(name) == Some(&(len as i64)) && len > 1 {
            return name.into();
        }
    }
    len.to_string()
}

#[derive(Debug, Clone)]
pub struct TraceFsm {
    pub fsm: FlowFsm,
    pub warnings: Vec<String>,
}

/// Builds an algorithm FSM from the stream messages of one task of a
/// trusted run. The longest repeated run becomes a loop bounded by `bound`;
/// the rest of the trace is merged in as a trie, so the last iteration may
/// branch off the loop body (e.g. on a different flag value).
pub fn from_trace(
    name: &str,
    task: &str,
    messages: &[LogicalMessage],
    stats: &BTreeMap<String, i64>,
    bound: &str,
) -> Result<TraceFsm, FsmError> {
    let msgs: Vec<&LogicalMessage> = messages.iter().filter(|m| m.task_id == task && m.flow != FlowLevel::Control).collect();
    let events: Vec<Event> = msgs.iter().map(|m| Event::from_message(m)).collect();
    let toks: Vec<Token> = events.iter().map(Token::of).collect();
    let mut warnings = Vec::new();
    let mut b = Builder { states: vec![], transitions: vec![] };
    let start = b.new_state();
    let mut loops = vec![];
    let end = match best_period(&toks) {
        Some((s, p, _)) => {
            let head = b.insert(start.clone(), &toks[..s]);
            let body = &toks[s..s + p];
            let last = b.insert(head.clone(), &body[..p - 1]);
            b.add(&last, &body[p - 1], &head);
            loops.push(LoopSpec { head: head.clone(), bound: bound.into() });
            b.insert(head, &toks[s + p..])
        }
        None => {
            if events.iter().any(|e| e.iteration.unwrap_or(0) > 0) {
                warnings.push("trace has several iterations but no repeated structure".into());
            }
            b.insert(start.clone(), &toks)
        }
    };
    let mut decls: Vec<VariableDecl> = Vec::new();
    // n_rows is the aligned row count, bound from the intersection result.
    let mut st = stats.clone();
    if let Some(m) = messages.iter().find(|m| m.variable.ends_with(".intersection.0")) {
        if let Ok(p) = Payload::decode(&m.payload) {
            st.insert("n_rows".into(), p.len() as i64);
        }
    }
    for (m, e) in msgs.iter().zip(&events) {
        let pattern = format!("*.{}.*", e.name);
        if decls.iter().any(|d| d.pattern == pattern) {
            continue;
        }
        let (kind, len) = match Payload::decode(&m.payload) {
            Ok(p) => (p.kind(), p.len()),
            Err(_) => (PayloadKind::OpaqueForbidden, 0),
        };
        let key = (kind == PayloadKind::CiphertextVector).then(|| "paillier".to_string());
        decls.push(VariableDecl { pattern, flow: e.flow, body_type: kind, length_expr: infer_length(len, &st), key });
    }
    let mut fsm = FlowFsm {
        name: name.into(),
        states: b.states,
        initial: start,
        accepting: vec![end],
        transitions: b.transitions,
        loops,
        declared_variables: decls,
    };
    if !fsm.loops.is_empty() {
        let head = fsm.loops[0].head.clone();
        let mut inside = std::collections::BTreeSet::from([head.clone()]);
        let mut stack = vec![head];
        while let Some(s) = stack.pop() {
            for t in fsm.transitions.iter().filter(|t| t.from == s) {
                if inside.insert(t.to.clone()) {
                    stack.push(t.to.clone());
                }
            }
        }
        let mut bound_fsm = fsm.clone();
        for t in bound_fsm.transitions.iter_mut().filter(|t| inside.contains(&t.from)) {
            t.event.iteration = IterBind::Counter;
        }
        let mut big = st.clone();
        for n in super::expr::Expr::parse(bound).map(|e| e.names()).unwrap_or_default() {
            big.insert(n, i64::MAX / 4);
        }
        let mut run = FsmRun::new(bound_fsm.clone(), &big);
        if events.iter().all(|e| matches!(run.step(e), Step::Moved { .. })) {
            fsm = bound_fsm;
        }
    }
    fsm.validate()?;
    Ok(TraceFsm { fsm, warnings })
}

/// Small honest run of one training algorithm in memory, for
/// [`from_trace`]. Returns the messages and the stats they were run with.
pub fn trusted_trace(train: TrainKind, max_iter: u32) -> Result<(Vec<LogicalMessage>, BTreeMap<String, i64>), JobError> {
    let mut cfg = JobConfig::example("trusted", IntersectionKind::Raw, train).with_seed(7);
    cfg.dataset = DatasetSpec::Explicit { rows: 48, guest_dim: 3, host_dim: 5, seed: 7 };
    cfg.max_iter = max_iter;
    cfg.modulus_bits = 256;
    cfg.link = crate::gateway::LinkProfile::zero();
    let (g, h) = load_dataset(&cfg.dataset)?;
    let run = run_in_memory(&cfg, g, h, job_schema(&cfg))?;
    Ok((run.messages.iter().map(|m| (**m).clone()).collect(), run.stats))
}

/// The hetero-LR FSM generated from a trusted two-iteration run.
pub fn lr_from_trace() -> Result<TraceFsm, Box<dyn std::error::Error + Send + Sync>> {
    let (msgs, stats) = trusted_trace(TrainKind::HeteroLr, 2)?;
    Ok(from_trace("hetero_lr", "train", &msgs, &stats, "max_iter")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::pattern_matches;
    use crate::messages::{PartyId, TransferMode};
    use crate::parties::Component;
    use std::time::Instant;

    fn msg(var: &str, src: PartyId, dst: PartyId, payload: Payload) -> LogicalMessage {
        LogicalMessage {
            job_id: "j".into(),
            task_id: "train".into(),
            variable: var.into(),
            flow: FlowLevel::Data,
            undeclared: false,
            src,
            dst,
            transfer_mode: TransferMode::Stream,
            payload: payload.encode(),
            partition_count: 1,
            partition_hashes: vec![],
            credentials: vec![],
            ledger_indices: vec![],
            completed_at: 0,
            collected_at: Instant::now(),
        }
    }

    #[test]
    fn control_fsm_for_two_components() {
        let cfg = JobConfig::example("j", IntersectionKind::Raw, TrainKind::HeteroLr);
        let f = control_fsm(&cfg).unwrap();
        for s in ["Submitted", "Running(intersect)", "Completed(intersect)", "Running(train)", "Completed(train)", "JobComplete"] {
            assert!(f.states.iter().any(|x| x == s), "{s}");
        }
        // start(train) only leaves Completed(intersect).
        let froms: Vec<_> = f.transitions.iter().filter(|t| t.event.variable == "start" && t.event.task == "train").map(|t| &t.from).collect();
        assert_eq!(froms, vec!["Completed(intersect)"]);
    }

    #[test]
    fn empty_dag_and_cycle() {
        let mut cfg = JobConfig::example("j", IntersectionKind::Raw, TrainKind::HeteroLr);
        cfg.dag.clear();
        let f = control_fsm(&cfg).unwrap();
        assert!(f.transitions.iter().any(|t| t.from == "Submitted" && t.to == "JobComplete"));
        cfg.dag = vec![
            Component { name: "a".into(), kind: ComponentKind::Train(TrainKind::HeteroLr), depends_on: vec!["b".into()] },
            Component { name: "b".into(), kind: ComponentKind::Train(TrainKind::HeteroLr), depends_on: vec!["a".into()] },
        ];
        assert!(control_fsm(&cfg).is_err());
    }

    #[test]
    fn shipped_templates_are_valid() {
        for k in [
            ComponentKind::Intersection(IntersectionKind::Raw),
            ComponentKind::Intersection(IntersectionKind::Rsa),
            ComponentKind::Train(TrainKind::HeteroLr),
            ComponentKind::Train(TrainKind::SecureboostLite),
        ] {
            let f = template(k).bind_task("x");
            assert!(f.declared_variables.iter().all(|d| d.pattern.starts_with("x.")));
        }
        let cfg = JobConfig::example("j", IntersectionKind::Rsa, TrainKind::SecureboostLite);
        let s = job_schema(&cfg);
        assert!(s.lookup("train.host_hist.3").is_some());
        assert!(s.lookup("intersect.blinded.0").is_some());
        assert!(s.lookup("train.labels_leak.0").is_none());
    }

    #[test]
    fn single_message_trace_has_no_loop() {
        let m = msg("train.only.0", PartyId::Guest, PartyId::Host, Payload::PlainScalar(1.0));
        let t = from_trace("one", "train", &[m], &BTreeMap::new(), "max_iter").unwrap();
        assert_eq!(t.fsm.states.len(), 2);
        assert!(t.fsm.loops.is_empty());
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn non_repeating_multi_iteration_trace_warns() {
        let a = msg("train.a.0", PartyId::Guest, PartyId::Host, Payload::PlainScalar(1.0));
        let b = msg("train.b.1", PartyId::Host, PartyId::Guest, Payload::PlainScalar(1.0));
        let t = from_trace("ab", "train", &[a, b], &BTreeMap::new(), "max_iter").unwrap();
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn lr_trace_gives_one_loop_matching_shipped_config() {
        let t = lr_from_trace().unwrap();
        let f = &t.fsm;
        assert_eq!(f.loops.len(), 1);
        assert_eq!(f.loops[0].bound, "max_iter");
        let head = &f.loops[0].head;
        // Walk the loop body from the head.
        let mut names = vec![];
        let mut at = head.clone();
        loop {
            let t = f.transitions.iter().find(|t| t.from == at && t.event.flag != Some(1)).unwrap();
            names.push(format!("{}>{}", t.event.variable, t.event.dst[0]));
            at = t.to.clone();
            if at == *head {
                break;
            }
        }
        assert_eq!(
            names,
            [
                "host_forward>guest",
                "host_loss_aux>guest",
                "fwd_residual>host",
                "masked_grad>guest",
                "unmasked_grad>host",
                "stop_flag>coordinator",
                "stop_flag>host"
            ]
        );
        assert!(f.transitions.iter().all(|t| t.event.iteration == IterBind::Counter));
        let d = |p: &str| f.declared_variables.iter().find(|d| pattern_matches(&d.pattern, p)).unwrap().length_expr.clone();
        assert_eq!(d("x.host_forward.0"), "n_rows");
        assert_eq!(d("x.masked_grad.0"), "n_host_features");
        assert_eq!(d("x.stop_flag.0"), "1");
        assert_eq!(*f, template(ComponentKind::Train(TrainKind::HeteroLr)), "configs/fsm/hetero_lr.json is stale:\n{}", f.to_json());
    }
}
