//! Counter-bounded flow automata and their runtime.

use super::expr::Expr;
use crate::collector::{DeclaredVariable, LogicalMessage, Schema};
use crate::messages::{FlowLevel, Payload, PayloadKind, PartyId, VarName, TAG_BOOL_FLAG};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum FsmError {
    #[error("fsm config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("fsm {name}: {msg}")]
    Invalid { name: String, msg: String },
}

/// Concrete event derived from one logical message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub flow: FlowLevel,
    pub task: String,
    /// Variable name without task and iteration, or the control command.
    pub name: String,
    pub iteration: Option<u32>,
    pub src: PartyId,
    pub dst: PartyId,
    pub flag: Option<u8>,
}

impl Event {
    pub fn from_message(m: &LogicalMessage) -> Event {
        let flag = match m.payload.first() {
            Some(&TAG_BOOL_FLAG) => match Payload::decode(&m.payload) {
                Ok(Payload::BoolFlag(b)) => Some(b),
                _ => None,
            },
            _ => None,
        };
        if m.flow == FlowLevel::Control {
            let (task, iteration) = match Payload::decode(&m.payload) {
                Ok(Payload::Control(c)) => (c.component, Some(c.iteration)),
                _ => (m.task_id.clone(), None),
            };
            return Event { flow: m.flow, task, name: m.variable.clone(), iteration, src: m.src.clone(), dst: m.dst.clone(), flag };
        }
        let (name, iteration) = match VarName::parse(&m.variable) {
            Some(v) => (v.name, Some(v.iteration)),
            None => (m.variable.clone(), None),
        };
        Event { flow: m.flow, task: m.task_id.clone(), name, iteration, src: m.src.clone(), dst: m.dst.clone(), flag }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}->{} {}.{}", self.flow, self.src, self.dst, self.task, self.name)?;
        if let Some(i) = self.iteration {
            write!(f, ".{i}")?;
        }
        if let Some(b) = self.flag {
            write!(f, "={b}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    #[default]
    Single,
    /// One message to each listed destination, in any order.
    AssemblyComplete,
}

/// How the iteration suffix of a matching event is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterBind {
    #[default]
    Any,
    /// Equal to the active loop counter minus one.
    Counter,
    /// Equal to the iteration of the event that last entered a loop head.
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPattern {
    pub flow: FlowLevel,
    #[serde(default = "star")]
    pub task: String,
    pub variable: String,
    pub src: String,
    pub dst: Vec<String>,
    #[serde(default)]
    pub kind: EventKind,
    #[serde(default)]
    pub iteration: IterBind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<u8>,
}

fn star() -> String {
    "*".into()
}

fn compatible(a: &str, b: &str) -> bool {
    a == "*" || b == "*" || a == b
}

impl EventPattern {
    pub fn single(flow: FlowLevel, variable: &str, src: &str, dst: &str) -> Self {
        EventPattern {
            flow,
            task: star(),
            variable: variable.into(),
            src: src.into(),
            dst: vec![dst.into()],
            kind: EventKind::Single,
            iteration: IterBind::Any,
            flag: None,
        }
    }

    /// Ignores the iteration binding, which is checked by the runtime.
    pub fn matches(&self, e: &Event) -> bool {
        let src = e.src.to_string();
        let dst = e.dst.to_string();
        self.flow == e.flow
            && (self.task == "*" || self.task == e.task)
            && (self.variable == "*" || self.variable == e.name)
            && (self.src == "*" || self.src == src)
            && self.dst.iter().any(|d| d == "*" || *d == dst)
            && self.flag.map_or(true, |f| e.flag == Some(f))
    }

    pub fn overlaps(&self, o: &EventPattern) -> bool {
        self.flow == o.flow
            && compatible(&self.task, &o.task)
            && compatible(&self.variable, &o.variable)
            && compatible(&self.src, &o.src)
            && self.dst.iter().any(|a| o.dst.iter().any(|b| compatible(a, b)))
            && match (self.flag, o.flag) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}->{} {}.{}", self.flow, self.src, self.dst.join("+"), self.task, self.variable)?;
        if let Some(b) = self.flag {
            write!(f, "={b}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub event: EventPattern,
    pub to: String,
    /// Taking this transition is legal but reported at this severity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub head: String,
    pub bound: String,
}

/// Declared transfer variable as written in FSM config files. `pattern` is
/// `task.name.*`; a `*` task is replaced when the template is bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub pattern: String,
    pub flow: FlowLevel,
    pub body_type: PayloadKind,
    pub length_expr: String,
    /// `paillier` or `rsa` for ciphertext bodies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl VariableDecl {
    pub fn declared(&self) -> DeclaredVariable {
        DeclaredVariable::new(&self.pattern, self.flow, self.body_type, &self.length_expr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowFsm {
    pub name: String,
    pub states: Vec<String>,
    pub initial: String,
    pub accepting: Vec<String>,
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub loops: Vec<LoopSpec>,
    #[serde(default)]
    pub declared_variables: Vec<VariableDecl>,
}

impl FlowFsm {
    pub fn from_json(s: &str) -> Result<FlowFsm, FsmError> {
        let f: FlowFsm = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fsm json")
    }

    fn invalid(&self, msg: impl Into<String>) -> FsmError {
        FsmError::Invalid { name: self.name.clone(), msg: msg.into() }
    }

    /// Structure, determinism, loop bounds and reachability of acceptance.
    pub fn validate(&self) -> Result<(), FsmError> {
        let states: BTreeSet<&str> = self.states.iter().map(String::as_str).collect();
        if states.len() != self.states.len() {
            return Err(self.invalid("duplicate state names"));
        }
        let known = |s: &str| states.contains(s);
        if !known(&self.initial) {
            return Err(self.invalid(format!("unknown initial state {}", self.initial)));
        }
        for s in self.accepting.iter().chain(self.loops.iter().map(|l| &l.head)) {
            if !known(s) {
                return Err(self.invalid(format!("unknown state {s}")));
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if !known(&t.from) || !known(&t.to) {
                return Err(self.invalid(format!("transition {i} uses an unknown state")));
            }
            if t.event.dst.is_empty() {
                return Err(self.invalid(format!("transition {i} has no destination")));
            }
            if let Some(r) = &t.report {
                if !["info", "warning", "alarm"].contains(&r.as_str()) {
                    return Err(self.invalid(format!("transition {i}: bad report level {r}")));
                }
            }
        }
        for (i, a) in self.transitions.iter().enumerate() {
            for (j, b) in self.transitions.iter().enumerate().skip(i + 1) {
                if a.from == b.from && a.event.overlaps(&b.event) {
                    return Err(self.invalid(format!("state {} is not deterministic: transitions {i} and {j}", a.from)));
                }
            }
        }
        for l in &self.loops {
            Expr::parse(&l.bound).map_err(|e| self.invalid(format!("loop at {}: {e}", l.head)))?;
        }
        // Every cycle must pass through a loop head.
        let heads: BTreeSet<&str> = self.loops.iter().map(|l| l.head.as_str()).collect();
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &self.transitions {
            if !heads.contains(t.from.as_str()) && !heads.contains(t.to.as_str()) {
                adj.entry(t.from.as_str()).or_default().push(t.to.as_str());
            }
        }
        if let Some(s) = find_cycle(&adj) {
            return Err(self.invalid(format!("unbounded cycle through {s}")));
        }
        if !self.accepting.is_empty() {
            let reach = self.reachable();
            if !self.accepting.iter().any(|a| reach.contains(a.as_str())) {
                return Err(self.invalid("no accepting state is reachable"));
            }
        } else {
            return Err(self.invalid("no accepting states"));
        }
        for d in &self.declared_variables {
            Expr::parse(&d.length_expr).map_err(|e| self.invalid(format!("variable {}: {e}", d.pattern)))?;
        }
        Ok(())
    }

    fn reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::from([self.initial.as_str()]);
        let mut stack = vec![self.initial.as_str()];
        while let Some(s) = stack.pop() {
            for t in self.transitions.iter().filter(|t| t.from == s) {
                if seen.insert(t.to.as_str()) {
                    stack.push(t.to.as_str());
                }
            }
        }
        seen
    }

    /// Replaces `*` tasks with `task`.
    pub fn bind_task(&self, task: &str) -> FlowFsm {
        let mut f = self.clone();
        f.name = format!("{}@{task}", self.name);
        for t in &mut f.transitions {
            if t.event.task == "*" {
                t.event.task = task.into();
            }
        }
        for d in &mut f.declared_variables {
            if let Some(rest) = d.pattern.strip_prefix("*.") {
                d.pattern = format!("{task}.{rest}");
            }
        }
        f
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.declared_variables.iter().map(VariableDecl::declared).collect())
    }

    /// Names of the alphabet, for reports.
    pub fn alphabet(&self) -> Vec<String> {
        let mut a: Vec<String> = self.transitions.iter().map(|t| t.event.to_string()).collect();
        a.sort();
        a.dedup();
        a
    }
}

fn find_cycle<'a>(adj: &BTreeMap<&'a str, Vec<&'a str>>) -> Option<&'a str> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut mark: BTreeMap<&str, u8> = BTreeMap::new();
    fn dfs<'a>(n: &'a str, adj: &BTreeMap<&'a str, Vec<&'a str>>, mark: &mut BTreeMap<&'a str, u8>) -> Option<&'a str> {
        mark.insert(n, 1);
        for &m in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            match mark.get(m).copied().unwrap_or(0) {
                1 => return Some(m),
                0 => {
                    if let Some(c) = dfs(m, adj, mark) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        mark.insert(n, 2);
        None
    }
    for &n in adj.keys() {
        if mark.get(n).copied().unwrap_or(0) == 0 {
            if let Some(c) = dfs(n, adj, &mut mark) {
                return Some(c);
            }
        }
    }
    None
}

/// Result of feeding one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Moved { from: String, to: String, report: Option<String> },
    /// Part of a composite event; waiting for the rest.
    Partial,
    NoMatch { state: String, reason: String },
    LoopExceeded { head: String, count: u64, bound: i64 },
}

/// One running instance of a [`FlowFsm`].
#[derive(Debug, Clone)]
pub struct FsmRun {
    fsm: FlowFsm,
    state: String,
    bounds: BTreeMap<String, i64>,
    counters: BTreeMap<String, u64>,
    active_loop: Option<String>,
    bound_iter: Option<u32>,
    pending: Option<(usize, BTreeSet<String>)>,
    steps: u64,
}

impl FsmRun {
    /// Bounds that do not evaluate under `stats` are treated as unbounded
    /// and reported by [`FsmRun::unbound_loops`].
    pub fn new(fsm: FlowFsm, stats: &BTreeMap<String, i64>) -> FsmRun {
        let bounds = fsm
            .loops
            .iter()
            .filter_map(|l| Expr::parse(&l.bound).ok()?.eval(stats).ok().map(|b| (l.head.clone(), b)))
            .collect();
        let state = fsm.initial.clone();
        let mut r = FsmRun {
            fsm,
            state: state.clone(),
            bounds,
            counters: BTreeMap::new(),
            active_loop: None,
            bound_iter: None,
            pending: None,
            steps: 0,
        };
        r.enter(&state, None);
        r
    }

    pub fn fsm(&self) -> &FlowFsm {
        &self.fsm
    }

    pub fn state(&self) -> &str {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn unbound_loops(&self) -> Vec<String> {
        self.fsm.loops.iter().filter(|l| !self.bounds.contains_key(&l.head)).map(|l| l.head.clone()).collect()
    }

    pub fn is_accepting(&self) -> bool {
        self.pending.is_none() && self.fsm.accepting.contains(&self.state)
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    fn is_head(&self, s: &str) -> bool {
        self.fsm.loops.iter().any(|l| l.head == s)
    }

    fn enter(&mut self, s: &str, iteration: Option<u32>) -> Option<Step> {
        if !self.is_head(s) {
            return None;
        }
        let c = self.counters.entry(s.to_string()).or_insert(0);
        *c += 1;
        let count = *c;
        self.active_loop = Some(s.to_string());
        self.bound_iter = iteration;
        match self.bounds.get(s) {
            Some(&b) if count as i64 > b => Some(Step::LoopExceeded { head: s.to_string(), count, bound: b }),
            _ => None,
        }
    }

    fn iter_ok(&self, bind: IterBind, e: &Event) -> bool {
        match bind {
            IterBind::Any => true,
            IterBind::Counter => {
                let c = self.active_loop.as_ref().and_then(|h| self.counters.get(h)).copied().unwrap_or(1);
                e.iteration == Some((c - 1) as u32)
            }
            IterBind::Same => self.bound_iter.is_none() || e.iteration == self.bound_iter,
        }
    }

    /// Feeds one event. On no match the state is left unchanged.
    pub fn step(&mut self, e: &Event) -> Step {
        self.steps += 1;
        if let Some((ti, got)) = self.pending.clone() {
            let t = &self.fsm.transitions[ti];
            let dst = e.dst.to_string();
            if t.event.matches(e) && !got.contains(&dst) && self.iter_ok(t.event.iteration, e) {
                let mut got = got;
                got.insert(dst);
                if t.event.dst.iter().all(|d| got.contains(d)) {
                    self.pending = None;
                    return self.fire(ti, e);
                }
                self.pending = Some((ti, got));
                return Step::Partial;
            }
            return Step::NoMatch {
                state: self.state.clone(),
                reason: format!("expected the rest of composite {}", t.event),
            };
        }
        let found = self.fsm.transitions.iter().position(|t| t.from == self.state && t.event.matches(e));
        let Some(ti) = found else {
            return Step::NoMatch { state: self.state.clone(), reason: "no transition".into() };
        };
        let t = &self.fsm.transitions[ti];
        if !self.iter_ok(t.event.iteration, e) {
            return Step::NoMatch {
                state: self.state.clone(),
                reason: format!("iteration {:?} out of sequence", e.iteration),
            };
        }
        if t.event.kind == EventKind::AssemblyComplete && t.event.dst.len() > 1 {
            self.pending = Some((ti, BTreeSet::from([e.dst.to_string()])));
            return Step::Partial;
        }
        self.fire(ti, e)
    }

    fn fire(&mut self, ti: usize, e: &Event) -> Step {
        let t = self.fsm.transitions[ti].clone();
        let from = std::mem::replace(&mut self.state, t.to.clone());
        if let Some(ex) = self.enter(&t.to, e.iteration) {
            return ex;
        }
        Step::Moved { from, to: t.to, report: t.report }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(name: &str, it: u32, src: PartyId, dst: PartyId) -> Event {
        Event { flow: FlowLevel::Data, task: "t".into(), name: name.into(), iteration: Some(it), src, dst, flag: None }
    }

    fn pingpong() -> FlowFsm {
        let mut a = EventPattern::single(FlowLevel::Data, "ping", "guest", "host");
        a.iteration = IterBind::Counter;
        let mut b = EventPattern::single(FlowLevel::Data, "pong", "host", "guest");
        b.iteration = IterBind::Counter;
        FlowFsm {
            name: "pp".into(),
            states: vec!["h".into(), "w".into()],
            initial: "h".into(),
            accepting: vec!["h".into()],
            transitions: vec![
                Transition { from: "h".into(), event: a, to: "w".into(), report: None },
                Transition { from: "w".into(), event: b, to: "h".into(), report: None },
            ],
            loops: vec![LoopSpec { head: "h".into(), bound: "max_iter + 1".into() }],
            declared_variables: vec![],
        }
    }

    #[test]
    fn loop_bound_and_iteration_binding() {
        let f = pingpong();
        f.validate().unwrap();
        let stats = BTreeMap::from([("max_iter".to_string(), 2)]);
        let mut r = FsmRun::new(f, &stats);
        for i in 0..2 {
            assert!(matches!(r.step(&ev("ping", i, PartyId::Guest, PartyId::Host)), Step::Moved { .. }));
            assert!(matches!(r.step(&ev("pong", i, PartyId::Host, PartyId::Guest)), Step::Moved { .. }));
        }
        assert!(r.is_accepting());
        assert!(matches!(r.step(&ev("ping", 5, PartyId::Guest, PartyId::Host)), Step::NoMatch { .. }));
        r.step(&ev("ping", 2, PartyId::Guest, PartyId::Host));
        assert!(matches!(r.step(&ev("pong", 2, PartyId::Host, PartyId::Guest)), Step::LoopExceeded { count: 4, bound: 3, .. }));
    }

    #[test]
    fn nondeterminism_and_unbounded_cycles_rejected() {
        let mut f = pingpong();
        f.transitions.push(Transition {
            from: "h".into(),
            event: EventPattern::single(FlowLevel::Data, "*", "guest", "*"),
            to: "h".into(),
            report: None,
        });
        assert!(f.validate().unwrap_err().to_string().contains("not deterministic"));
        let mut f = pingpong();
        f.loops.clear();
        assert!(f.validate().unwrap_err().to_string().contains("unbounded cycle"));
    }

    #[test]
    fn composite_waits_for_all_parts() {
        let mut p = EventPattern::single(FlowLevel::Control, "start", "coordinator", "guest");
        p.dst.push("host".into());
        p.kind = EventKind::AssemblyComplete;
        let f = FlowFsm {
            name: "c".into(),
            states: vec!["a".into(), "b".into()],
            initial: "a".into(),
            accepting: vec!["b".into()],
            transitions: vec![Transition { from: "a".into(), event: p, to: "b".into(), report: None }],
            loops: vec![],
            declared_variables: vec![],
        };
        f.validate().unwrap();
        let c = |dst: PartyId| Event {
            flow: FlowLevel::Control,
            task: "x".into(),
            name: "start".into(),
            iteration: Some(0),
            src: PartyId::Coordinator,
            dst,
            flag: None,
        };
        let mut r = FsmRun::new(f.clone(), &BTreeMap::new());
        assert_eq!(r.step(&c(PartyId::Host)), Step::Partial);
        assert!(!r.is_accepting());
        assert!(matches!(r.step(&c(PartyId::Guest)), Step::Moved { .. }));
        assert!(r.is_accepting());
        let mut r = FsmRun::new(f, &BTreeMap::new());
        r.step(&c(PartyId::Host));
        assert!(matches!(r.step(&c(PartyId::Host)), Step::NoMatch { .. }));
    }
}
