//! Message collector: flow classification, partition reassembly, and the
//! ledger / real-time queue append path.

pub mod ledger;
pub mod metadata;
pub mod schema;

pub use ledger::{read_verified, record_offsets, verify_chain, ChainStatus, LedgerBody, LedgerError, LedgerRecord, LedgerWriter};
pub use metadata::{DataRef, JobEnd, JobMetadata, PartyTiming};
pub use schema::{generalize, pattern_matches, DeclaredVariable, Schema};

use crate::kms::AccessRecord;
use crate::messages::{sha256, Digest, Envelope, FlowLevel, PartyId, PayloadKind, TransferKey, TransferMode};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::time::Instant;

pub const QUEUE_BOUND: usize = 65_536;

/// A complete transfer variable.
#[derive(Debug, Clone)]
pub struct LogicalMessage {
    pub job_id: String,
    pub task_id: String,
    pub variable: String,
    pub flow: FlowLevel,
    /// Stream message whose variable is not in the declared schema.
    pub undeclared: bool,
    pub src: PartyId,
    pub dst: PartyId,
    pub transfer_mode: TransferMode,
    /// Partition payloads concatenated in index order.
    pub payload: Vec<u8>,
    pub partition_count: u32,
    pub partition_hashes: Vec<Digest>,
    /// Distinct credentials seen across partitions.
    pub credentials: Vec<Vec<u8>>,
    pub ledger_indices: Vec<u64>,
    /// Virtual delivery time of the last partition.
    pub completed_at: u64,
    pub collected_at: Instant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicatePartition { variable: String, src: String, dst: String, index: u32, ledger_index: Option<u64> },
    InconsistentPartitionTotal { variable: String, src: String, dst: String, ledger_index: Option<u64> },
    IncompleteVariable { variable: String, src: String, dst: String, received: u32, total: u32 },
    InvalidEnvelope { variable: String, reason: String, ledger_index: Option<u64> },
}

#[derive(Debug, Clone)]
pub enum CollectorEvent {
    Message(Arc<LogicalMessage>),
    Violation(Violation, Instant),
    KmsAccess(AccessRecord, Instant),
    End,
}

struct Partial {
    total: u32,
    parts: BTreeMap<u32, Envelope>,
    ledger_indices: Vec<u64>,
}

#[derive(Default)]
struct State {
    ledger: Option<LedgerWriter>,
    partials: HashMap<TransferKey, Partial>,
    collected: u64,
    messages: u64,
    violations: Vec<Violation>,
    errors: Vec<String>,
    closed: bool,
}

pub struct Collector {
    job_id: String,
    schema: Schema,
    state: Mutex<State>,
    queue: Mutex<Option<SyncSender<CollectorEvent>>>,
}

#[derive(Debug, Clone, Default)]
pub struct CollectorSummary {
    pub collected: u64,
    pub messages: u64,
    pub violations: Vec<Violation>,
    pub errors: Vec<String>,
    pub ledger_len: u64,
    pub ledger_head: Option<Digest>,
}

pub fn classify(env: &Envelope, schema: &Schema) -> (FlowLevel, bool) {
    if env.transfer_mode == TransferMode::Unary {
        return (FlowLevel::Control, false);
    }
    match schema.lookup(&env.variable) {
        Some(d) => match d.body_type {
            PayloadKind::PlainScalar | PayloadKind::BoolFlag => (FlowLevel::Algorithm, false),
            _ => (FlowLevel::Data, false),
        },
        None => (FlowLevel::Data, true),
    }
}

impl Collector {
    pub fn new(job_id: &str, schema: Schema, ledger: Option<LedgerWriter>) -> Collector {
        Collector {
            job_id: job_id.to_string(),
            schema,
            state: Mutex::new(State { ledger, ..State::default() }),
            queue: Mutex::new(None),
        }
    }

    pub fn job_id(&self) -> &str {
        &self.job_id
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Opens the real-time queue. Only one consumer is supported.
    pub fn subscribe(&self) -> Receiver<CollectorEvent> {
        let (tx, rx) = sync_channel(QUEUE_BOUND);
        *self.queue.lock().unwrap() = Some(tx);
        rx
    }

    fn emit(&self, ev: CollectorEvent) {
        if let Some(tx) = self.queue.lock().unwrap().as_ref() {
            let _ = tx.send(ev);
        }
    }

    fn append_locked(st: &mut State, body: &LedgerBody, annot: &Value) -> Option<u64> {
        let w = st.ledger.as_mut()?;
        match w.append(body, annot) {
            Ok((i, _)) => Some(i),
            Err(e) => {
                tracing::error!(error = %e, "ledger append failed");
                st.errors.push(e.to_string());
                None
            }
        }
    }

    /// Appends a non-envelope record.
    pub fn append(&self, body: LedgerBody, annot: Value) -> Option<u64> {
        let mut st = self.state.lock().unwrap();
        Self::append_locked(&mut st, &body, &annot)
    }

    pub fn record_kms_access(&self, rec: &AccessRecord) {
        let body = LedgerBody::KmsAccess(serde_json::to_value(rec).expect("serializable"));
        self.append(body, json!({}));
        self.emit(CollectorEvent::KmsAccess(rec.clone(), Instant::now()));
    }

    fn violation(&self, st: &mut State, v: Violation) {
        st.violations.push(v.clone());
        self.emit(CollectorEvent::Violation(v, Instant::now()));
    }

    /// Persists, classifies and reassembles one envelope. Never fails: any
    /// storage error is logged and collection continues.
    pub fn collect(&self, env: &Envelope) -> Option<u64> {
        let mut st = self.state.lock().unwrap();
        st.collected += 1;
        let annot = json!({ "sent_at": env.sent_at, "recv_at": env.recv_at });
        let ledger_index = Self::append_locked(&mut st, &LedgerBody::envelope(env), &annot);
        if let Err(e) = env.validate() {
            let v = Violation::InvalidEnvelope { variable: env.variable.clone(), reason: e.to_string(), ledger_index };
            self.violation(&mut st, v);
            return ledger_index;
        }
        let (flow, undeclared) = classify(env, &self.schema);
        let key = env.transfer_key();
        let partial = st.partials.entry(key.clone()).or_insert_with(|| Partial {
            total: env.partition.total,
            parts: BTreeMap::new(),
            ledger_indices: Vec::new(),
        });
        let (variable, src, dst) = (env.variable.clone(), env.src.to_string(), env.dst.to_string());
        if partial.total != env.partition.total {
            let v = Violation::InconsistentPartitionTotal { variable, src, dst, ledger_index };
            self.violation(&mut st, v);
            return ledger_index;
        }
        if partial.parts.contains_key(&env.partition.index) {
            let v = Violation::DuplicatePartition { variable, src, dst, index: env.partition.index, ledger_index };
            self.violation(&mut st, v);
            return ledger_index;
        }
        partial.parts.insert(env.partition.index, env.clone());
        partial.ledger_indices.extend(ledger_index);
        if partial.parts.len() as u32 == partial.total {
            let p = st.partials.remove(&key).unwrap();
            st.messages += 1;
            let msg = assemble(&self.job_id, p, flow, undeclared);
            self.emit(CollectorEvent::Message(Arc::new(msg)));
        }
        ledger_index
    }

    /// Flags incomplete variables and ends the real-time stream.
    pub fn close(&self) -> CollectorSummary {
        let mut st = self.state.lock().unwrap();
        if !st.closed {
            st.closed = true;
            let mut pending: Vec<_> = st.partials.drain().collect();
            pending.sort_by(|a, b| a.0.cmp(&b.0));
            for (k, p) in pending {
                let v = Violation::IncompleteVariable {
                    variable: k.variable,
                    src: k.src.to_string(),
                    dst: k.dst.to_string(),
                    received: p.parts.len() as u32,
                    total: p.total,
                };
                self.violation(&mut st, v);
            }
            self.emit(CollectorEvent::End);
            *self.queue.lock().unwrap() = None;
        }
        CollectorSummary {
            collected: st.collected,
            messages: st.messages,
            violations: st.violations.clone(),
            errors: st.errors.clone(),
            ledger_len: st.ledger.as_ref().map_or(0, |l| l.len()),
            ledger_head: st.ledger.as_ref().map(|l| l.head()),
        }
    }

    /// Flushes and releases the ledger; returns its final head.
    pub fn finish_ledger(&self) -> Option<Digest> {
        let mut st = self.state.lock().unwrap();
        let mut w = st.ledger.take()?;
        if let Err(e) = w.sync() {
            st.errors.push(e.to_string());
        }
        Some(w.head())
    }

    pub fn collected(&self) -> u64 {
        self.state.lock().unwrap().collected
    }
}

fn assemble(job_id: &str, p: Partial, flow: FlowLevel, undeclared: bool) -> LogicalMessage {
    let first = p.parts.values().next().expect("complete partial is non-empty");
    let mut payload = Vec::new();
    let mut partition_hashes = Vec::new();
    let mut credentials: Vec<Vec<u8>> = Vec::new();
    let mut completed_at = 0;
    for env in p.parts.values() {
        payload.extend_from_slice(&env.payload);
        partition_hashes.push(sha256(&env.payload));
        if !credentials.contains(&env.credential) {
            credentials.push(env.credential.clone());
        }
        completed_at = completed_at.max(env.recv_at);
    }
    LogicalMessage {
        job_id: job_id.to_string(),
        task_id: first.task_id.clone(),
        variable: first.variable.clone(),
        flow,
        undeclared,
        src: first.src.clone(),
        dst: first.dst.clone(),
        transfer_mode: first.transfer_mode,
        payload,
        partition_count: p.total,
        partition_hashes,
        credentials,
        ledger_indices: p.ledger_indices,
        completed_at,
        collected_at: Instant::now(),
    }
}
