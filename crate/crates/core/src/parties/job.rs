//! Job runner: coordinator, guest and host threads over one gateway.

use super::config::{ComponentKind, ConfigError, IntersectionKind, JobConfig, TrainKind};
use super::ctx::{PartyCtx, PartyKeys};
use super::dataset::{load_dataset, Dataset, DatasetError};
use super::hooks::Hooks;
use super::lr::{self, LrParams};
use super::secureboost::{self, SbParams};
use super::{psi, PartyError};
use crate::collector::{
    Collector, CollectorEvent, CollectorSummary, DataRef, JobEnd, JobMetadata, LedgerBody, LedgerError, LedgerWriter,
    PartyTiming, Schema,
};
use crate::crypto::{PublicKey, RsaKeyPair, RsaPublicKey, SecretKey};
use crate::gateway::{Endpoint, Gateway, GatewayStats, RecvError};
use crate::kms::{self, KeyKind, KeyPart, Kms, KmsError};
use crate::messages::{sha256, Command, ControlCommand, Envelope, Partition, PartyId, Payload, TransferMode};
use num_bigint::BigUint;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::Duration;

pub const LEDGER_FILE: &str = "ledger.bin";

/// Hash over the protocol sources; recorded so replay can tell whether it
/// runs the same code.
pub fn code_hash() -> String {
    let sources: [&[u8]; 7] = [
        include_bytes!("ctx.rs"),
        include_bytes!("he.rs"),
        include_bytes!("psi.rs"),
        include_bytes!("lr.rs"),
        include_bytes!("secureboost.rs"),
        include_bytes!("job.rs"),
        include_bytes!("dataset.rs"),
    ];
    let mut all = Vec::new();
    for s in sources {
        all.extend_from_slice(&(s.len() as u64).to_be_bytes());
        all.extend_from_slice(s);
    }
    hex::encode(sha256(&all))
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Kms(#[from] KmsError),
    #[error("job i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, Default)]
pub struct PartyResult {
    pub model: Option<Value>,
    pub timing: PartyTiming,
    pub error: Option<String>,
    pub aligned_rows: Option<usize>,
    /// Sorted common ids, after an intersection ran.
    pub aligned_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Completed,
    /// Stopped early without an error, e.g. an empty intersection.
    Empty,
    Aborted(String),
}

impl JobStatus {
    pub fn as_str(&self) -> &str {
        match self {
            JobStatus::Completed => "completed",
            JobStatus::Empty => "empty",
            JobStatus::Aborted(_) => "aborted",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            JobStatus::Aborted(d) => d.clone(),
            _ => String::new(),
        }
    }
}

/// Everything one execution needs. Shared by the live run and replay.
pub struct ExecSetup {
    pub cfg: JobConfig,
    pub guest: Dataset,
    pub host: Dataset,
    pub guest_keys: PartyKeys,
    pub host_keys: PartyKeys,
    pub credentials: BTreeMap<PartyId, Vec<u8>>,
    pub gateway: Arc<Gateway>,
    pub hooks: Arc<dyn Hooks>,
    pub kms: Option<Arc<Kms>>,
}

#[derive(Debug, Clone)]
pub struct ExecResult {
    pub status: JobStatus,
    pub guest: PartyResult,
    pub host: PartyResult,
    pub coordinator: PartyTiming,
}

impl ExecResult {
    /// Largest virtual clock over the three endpoints.
    pub fn t_job_ns(&self) -> u64 {
        self.guest.timing.clock_ns.max(self.host.timing.clock_ns).max(self.coordinator.clock_ns)
    }

    pub fn timings(&self) -> Vec<PartyTiming> {
        vec![self.guest.timing.clone(), self.host.timing.clone(), self.coordinator.clone()]
    }

    pub fn model_hash(&self) -> String {
        model_hash(self.guest.model.as_ref(), self.host.model.as_ref())
    }
}

pub fn model_hash(guest: Option<&Value>, host: Option<&Value>) -> String {
    let v = json!({ "guest": guest, "host": host });
    hex::encode(sha256(&serde_json::to_vec(&v).expect("json")))
}

fn control_env(job_id: &str, task: &str, dst: PartyId, cmd: ControlCommand) -> Envelope {
    Envelope {
        job_id: job_id.to_string(),
        task_id: task.to_string(),
        seq: 0,
        flow: crate::messages::FlowLevel::Control,
        variable: cmd.command.variable().to_string(),
        src: PartyId::Coordinator,
        dst,
        transfer_mode: TransferMode::Unary,
        partition: Partition::SINGLE,
        credential: Vec::new(),
        payload: Payload::Control(cmd).encode(),
        sent_at: 0,
        recv_at: 0,
    }
}

fn coordinator_main(
    cfg: &JobConfig,
    gw: Arc<Gateway>,
    credential: Vec<u8>,
    hooks: Arc<dyn Hooks>,
) -> (JobStatus, PartyTiming) {
    let mut ep = Endpoint::attach(PartyId::Coordinator, gw, credential);
    let job = cfg.job_id.as_str();
    let parties = [PartyId::Guest, PartyId::Host];
    let send = |ep: &mut Endpoint, task: &str, cmd: ControlCommand| {
        for p in &parties {
            let _ = ep.send(control_env(job, task, p.clone(), cmd.clone()));
        }
    };
    send(&mut ep, "job", ControlCommand::new(Command::SubmitJob, "job"));
    let order = cfg.topo_order().unwrap_or_default();
    let mut status = JobStatus::Completed;
    'components: for comp in &order {
        send(&mut ep, &comp.name, ControlCommand::new(Command::Start, &comp.name));
        for env in hooks.coordinator_inject(&comp.name) {
            let _ = ep.send_raw(env);
        }
        loop {
            let r = ep.recv(&|e: &Envelope| e.dst == PartyId::Coordinator, true);
            let env = match r {
                Ok(env) => env,
                Err(e) => {
                    status = JobStatus::Aborted(match e {
                        RecvError::Deadlock => "deadlock".into(),
                        RecvError::Timeout => "timeout".into(),
                    });
                    break 'components;
                }
            };
            if env.transfer_mode != TransferMode::Unary {
                continue;
            }
            let Ok(Payload::Control(c)) = Payload::decode(&env.payload) else { continue };
            match c.command {
                Command::Complete if env.src == PartyId::Guest && c.component == comp.name => {
                    if c.detail == "empty" {
                        status = JobStatus::Empty;
                        break 'components;
                    }
                    break;
                }
                Command::Stop | Command::Abort => {
                    status = JobStatus::Aborted(format!("{} from {}: {}", c.command.variable(), env.src, c.detail));
                    break 'components;
                }
                _ => {}
            }
        }
    }
    match status {
        JobStatus::Completed => send(&mut ep, "job", ControlCommand::new(Command::JobComplete, "job")),
        _ => send(&mut ep, "job", ControlCommand::new(Command::Stop, "job").detail(status.detail())),
    }
    (status, ep.retire())
}

struct PartyInput {
    me: PartyId,
    cfg: JobConfig,
    ds: Dataset,
    keys: PartyKeys,
    credential: Vec<u8>,
    gw: Arc<Gateway>,
    hooks: Arc<dyn Hooks>,
    kms: Option<Arc<Kms>>,
}

fn run_component(
    ctx: &mut PartyCtx,
    inp: &PartyInput,
    name: &str,
    aligned: &mut Option<Dataset>,
) -> Result<(Option<Value>, String), PartyError> {
    let cfg = &inp.cfg;
    let seed = cfg.seed();
    let guest = inp.me == PartyId::Guest;
    let comp = cfg.dag.iter().find(|c| c.name == name).ok_or_else(|| PartyError::Protocol(format!("unknown component {name}")))?;
    match comp.kind {
        ComponentKind::Intersection(kind) => {
            let ids = if guest {
                psi::guest_intersect(ctx, name, kind, &inp.ds, &inp.keys, &seed)?
            } else {
                psi::host_intersect(ctx, name, kind, &inp.ds, &inp.keys, &seed)?
            };
            let empty = ids.is_empty();
            *aligned = Some(inp.ds.select(&ids)?);
            Ok((None, if empty { "empty".into() } else { String::new() }))
        }
        ComponentKind::Train(kind) => {
            if let Some(k) = &inp.kms {
                inp.hooks.on_train_start(&inp.me, k, &cfg.job_id, &inp.credential);
            }
            let ds = aligned.as_ref().unwrap_or(&inp.ds);
            let model = match kind {
                TrainKind::HeteroLr => {
                    let p = LrParams { max_iter: cfg.max_iter, learning_rate: cfg.learning_rate, eps: cfg.convergence_eps };
                    if guest {
                        serde_json::to_value(lr::guest_train(ctx, name, ds, &inp.keys, &seed, p)?)
                    } else {
                        serde_json::to_value(json!({ "w": lr::host_train(ctx, name, ds, &inp.keys, &seed, p)? }))
                    }
                }
                TrainKind::SecureboostLite => {
                    let p = SbParams { tree_depth: cfg.tree_depth, n_bins: cfg.n_bins };
                    if guest {
                        serde_json::to_value(secureboost::guest_train(ctx, name, ds, &inp.keys, &seed, p)?)
                    } else {
                        serde_json::to_value(secureboost::host_train(ctx, name, ds, &inp.keys, &seed, p)?)
                    }
                }
            };
            Ok((Some(model.expect("json")), String::new()))
        }
    }
}

fn party_main(inp: PartyInput) -> PartyResult {
    let ep = Endpoint::attach(inp.me.clone(), inp.gw.clone(), inp.credential.clone());
    let mut ctx = PartyCtx::new(inp.me.clone(), ep, &inp.cfg.job_id, inp.cfg.partitions, inp.hooks.clone());
    let mut aligned = None;
    let mut model = None;
    let mut error = None;
    loop {
        let cmd = match ctx.recv_control() {
            Ok(c) => c,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        match cmd.command {
            Command::Start => match run_component(&mut ctx, &inp, &cmd.component, &mut aligned) {
                Ok((m, detail)) => {
                    if m.is_some() {
                        model = m;
                    }
                    if inp.me == PartyId::Guest {
                        let c = ControlCommand::new(Command::Complete, &cmd.component).detail(detail);
                        let _ = ctx.send_control(PartyId::Coordinator, &cmd.component, c);
                    }
                }
                Err(PartyError::Stopped(_)) => break,
                Err(e) => {
                    tracing::warn!(party = %inp.me, error = %e, "component failed");
                    let c = ControlCommand::new(Command::Abort, &cmd.component).detail(e.to_string());
                    let _ = ctx.send_control(PartyId::Coordinator, &cmd.component, c);
                    error = Some(e.to_string());
                }
            },
            Command::Stop | Command::Abort | Command::JobComplete => break,
            _ => {}
        }
    }
    let aligned_rows = aligned.as_ref().map(Dataset::rows);
    let aligned_ids = aligned.map(|d| d.ids);
    PartyResult { model, timing: ctx.ep.retire(), error, aligned_rows, aligned_ids }
}

/// Runs the coordinator on this thread and both parties on their own.
pub fn execute(setup: ExecSetup) -> ExecResult {
    let ExecSetup { cfg, guest, host, guest_keys, host_keys, credentials, gateway, hooks, kms } = setup;
    let cred = |p: &PartyId| credentials.get(p).cloned().unwrap_or_default();
    // Register everyone before any thread can send.
    for p in [PartyId::Guest, PartyId::Host, PartyId::Coordinator] {
        gateway.register(&p);
    }
    let spawn = |me: PartyId, ds: Dataset, keys: PartyKeys| {
        let inp = PartyInput {
            credential: cred(&me),
            me: me.clone(),
            cfg: cfg.clone(),
            ds,
            keys,
            gw: gateway.clone(),
            hooks: hooks.clone(),
            kms: kms.clone(),
        };
        std::thread::Builder::new().name(me.to_string()).spawn(move || party_main(inp)).expect("spawn party")
    };
    let g = spawn(PartyId::Guest, guest, guest_keys);
    let h = spawn(PartyId::Host, host, host_keys);
    let (status, coordinator) = coordinator_main(&cfg, gateway.clone(), cred(&PartyId::Coordinator), hooks.clone());
    let guest = g.join().unwrap_or_else(|_| PartyResult { error: Some("guest panicked".into()), ..Default::default() });
    let host = h.join().unwrap_or_else(|_| PartyResult { error: Some("host panicked".into()), ..Default::default() });
    ExecResult { status, guest, host, coordinator }
}

/// Realtime consumer of collector events. Returns verdict bodies to append.
pub type MonitorFn = Box<dyn FnOnce(Receiver<CollectorEvent>, JobMetadata) -> Vec<Value> + Send>;

pub struct RunOptions {
    pub job_dir: PathBuf,
    pub kms: Arc<Kms>,
    pub hooks: Arc<dyn Hooks>,
    pub schema: Schema,
    pub monitor: Option<MonitorFn>,
}

#[derive(Debug, Clone)]
pub struct JobOutcome {
    pub job_id: String,
    pub status: JobStatus,
    pub exec: ExecResult,
    pub model_hash: String,
    pub t_job_ns: u64,
    pub verdicts: Vec<Value>,
    pub collector: CollectorSummary,
    pub gateway: GatewayStats,
    pub ledger_path: PathBuf,
    pub metadata: JobMetadata,
}

pub fn paillier_from_secret(bytes: &[u8]) -> Result<SecretKey, JobError> {
    SecretKey::decode(bytes).map_err(|e| JobError::Setup(format!("paillier secret: {e}")))
}

pub fn rsa_public_from(bytes: &[u8]) -> RsaPublicKey {
    RsaPublicKey { n: BigUint::from_bytes_be(bytes), e: BigUint::from(crate::crypto::rsa::PUBLIC_EXPONENT) }
}

/// Live keys: each party fetches what its ACL allows.
fn fetch_keys(
    kms: &Kms,
    cfg: &JobConfig,
    guest_cred: &[u8],
    host_cred: &[u8],
) -> Result<(PartyKeys, PartyKeys), JobError> {
    let pid = kms::key_id(&cfg.job_id, KeyKind::Paillier);
    let rid = kms::key_id(&cfg.job_id, KeyKind::Rsa);
    let sk = paillier_from_secret(&kms.get_key(&pid, guest_cred, KeyPart::Secret)?)?;
    let pk = PublicKey::decode(&kms.get_key(&pid, host_cred, KeyPart::Public)?)
        .map_err(|e| JobError::Setup(format!("paillier public: {e}")))?;
    let rsa = matches!(cfg.intersection(), Some((_, IntersectionKind::Rsa)));
    let (rsa_pub, rsa_sec) = if rsa {
        let sec = RsaKeyPair::decode(&kms.get_key(&rid, host_cred, KeyPart::Secret)?)
            .map_err(|e| JobError::Setup(format!("rsa secret: {e}")))?;
        let public = rsa_public_from(&kms.get_key(&rid, guest_cred, KeyPart::Public)?);
        (Some(public), Some(sec))
    } else {
        (None, None)
    };
    let guest = PartyKeys {
        paillier: sk.public.clone(),
        paillier_secret: Some(sk),
        rsa: rsa_pub,
        rsa_key_id: rid.clone(),
        rsa_secret: None,
        shadow: None,
    };
    let host = PartyKeys {
        paillier: pk,
        paillier_secret: None,
        rsa: rsa_sec.as_ref().map(|k| k.public.clone()),
        rsa_key_id: rid,
        rsa_secret: rsa_sec,
        shadow: None,
    };
    Ok((guest, host))
}

/// Result of [`run_in_memory`].
pub struct MemoryRun {
    pub exec: ExecResult,
    pub messages: Vec<Arc<crate::collector::LogicalMessage>>,
    pub stats: BTreeMap<String, i64>,
}

/// Runs a job on given datasets with a fresh KMS and no ledger, collecting
/// every logical message. Used for trusted traces and protocol tests.
pub fn run_in_memory(cfg: &JobConfig, guest: Dataset, host: Dataset, schema: Schema) -> Result<MemoryRun, JobError> {
    cfg.validate()?;
    let kms = Kms::shared();
    let seed = cfg.seed();
    kms.register_job(&cfg.job_id, &[PartyId::Guest, PartyId::Host, PartyId::Coordinator], Some(&seed))?;
    kms.create_key(&cfg.job_id, KeyKind::Paillier, &PartyId::Guest, &[PartyId::Host], cfg.modulus_bits, Some(&seed))?;
    if matches!(cfg.intersection(), Some((_, IntersectionKind::Rsa))) {
        kms.create_key(&cfg.job_id, KeyKind::Rsa, &PartyId::Host, &[PartyId::Guest], cfg.modulus_bits, Some(&seed))?;
    }
    let mut credentials = BTreeMap::new();
    for p in [PartyId::Guest, PartyId::Host, PartyId::Coordinator] {
        credentials.insert(p.clone(), kms.issue_credential(&kms::principal(&p), &cfg.job_id)?);
    }
    let (guest_keys, host_keys) = fetch_keys(&kms, cfg, &credentials[&PartyId::Guest], &credentials[&PartyId::Host])?;
    let mut stats = cfg.stats(0, guest.dim, host.dim);
    stats.remove("n_rows");
    stats.insert("n_guest_rows".into(), guest.rows() as i64);
    stats.insert("n_host_rows".into(), host.rows() as i64);
    let collector = Arc::new(Collector::new(&cfg.job_id, schema, None));
    let rx = collector.subscribe();
    let drain = std::thread::spawn(move || {
        let mut out = Vec::new();
        for e in rx.iter() {
            match e {
                CollectorEvent::Message(m) => out.push(m),
                CollectorEvent::End => break,
                _ => {}
            }
        }
        out
    });
    let gateway = Arc::new(
        Gateway::new(cfg.link, Some(collector.clone())).with_timeout(Duration::from_secs_f64(cfg.recv_timeout_s)),
    );
    let exec = execute(ExecSetup {
        cfg: cfg.clone(),
        guest,
        host,
        guest_keys,
        host_keys,
        credentials,
        gateway,
        hooks: Arc::new(super::NoHooks),
        kms: None,
    });
    collector.close();
    let messages = drain.join().expect("drain thread");
    Ok(MemoryRun { exec, messages, stats })
}

pub fn data_path(party: &str) -> String {
    format!("data/{party}.csv")
}

pub fn ledger_path(job_dir: &Path) -> PathBuf {
    job_dir.join(LEDGER_FILE)
}

/// Full live run: metadata, keys, realtime monitor, ledger close-out.
pub fn run_job(cfg: &JobConfig, mut opts: RunOptions) -> Result<JobOutcome, JobError> {
    cfg.validate()?;
    let (mut guest, mut host) = load_dataset(&cfg.dataset)?;
    guest.validate()?;
    host.validate()?;
    opts.hooks.before_metadata(&mut guest, &mut host);

    std::fs::create_dir_all(&opts.job_dir)?;
    let lpath = ledger_path(&opts.job_dir);
    let writer = LedgerWriter::create(&lpath)?;
    let collector = Arc::new(Collector::new(&cfg.job_id, opts.schema.clone(), Some(writer)));
    let sink = collector.clone();
    opts.kms.set_sink(move |rec| sink.record_kms_access(rec));

    let monitor = opts.monitor.take();
    let result = run_inner(cfg, &opts, monitor, guest, host, collector.clone(), &lpath);
    opts.kms.clear_sink();
    if result.is_err() {
        collector.close();
        collector.finish_ledger();
    }
    result
}

fn run_inner(
    cfg: &JobConfig,
    opts: &RunOptions,
    monitor: Option<MonitorFn>,
    mut guest: Dataset,
    mut host: Dataset,
    collector: Arc<Collector>,
    lpath: &Path,
) -> Result<JobOutcome, JobError> {
    let seed = cfg.seed();
    let key_seed = cfg.deterministic_keys.then_some(&seed);
    let kms = &opts.kms;
    kms.register_job(&cfg.job_id, &[PartyId::Guest, PartyId::Host, PartyId::Coordinator], key_seed)?;
    let mut key_ids = BTreeMap::new();
    let pid = kms.create_key(&cfg.job_id, KeyKind::Paillier, &PartyId::Guest, &[PartyId::Host], cfg.modulus_bits, key_seed)?;
    key_ids.insert("paillier".to_string(), pid);
    if matches!(cfg.intersection(), Some((_, IntersectionKind::Rsa))) {
        let rid = kms.create_key(&cfg.job_id, KeyKind::Rsa, &PartyId::Host, &[PartyId::Guest], cfg.modulus_bits, key_seed)?;
        key_ids.insert("rsa".to_string(), rid);
    }

    let mut data = Vec::new();
    for (party, ds) in [("guest", &guest), ("host", &host)] {
        let rel = data_path(party);
        ds.write_csv(&opts.job_dir.join(&rel))?;
        data.push(DataRef { party: party.into(), path: rel, content_hash: hex::encode(ds.content_hash()) });
    }
    let config = serde_json::to_value(cfg).expect("config json");
    let mut stats = cfg.stats(0, guest.dim, host.dim);
    stats.remove("n_rows");
    stats.insert("n_guest_rows".into(), guest.rows() as i64);
    stats.insert("n_host_rows".into(), host.rows() as i64);
    let metadata = JobMetadata {
        job_id: cfg.job_id.clone(),
        config_hash: hex::encode(sha256(&serde_json::to_vec(&config).expect("json"))),
        config,
        data,
        code_hash: code_hash(),
        key_ids,
        master_seed: cfg.master_seed.clone(),
        initial_model: json!({ "init": "zeros" }),
        stats,
    };
    collector.append(LedgerBody::JobMetadata(serde_json::to_value(&metadata).expect("json")), json!({}));
    opts.hooks.after_metadata(&mut guest, &mut host);

    let mut credentials = BTreeMap::new();
    for p in [PartyId::Guest, PartyId::Host, PartyId::Coordinator] {
        credentials.insert(p.clone(), kms.issue_credential(&kms::principal(&p), &cfg.job_id)?);
    }
    let (guest_keys, host_keys) = fetch_keys(kms, cfg, &credentials[&PartyId::Guest], &credentials[&PartyId::Host])?;

    let mut gw = Gateway::new(cfg.link, Some(collector.clone())).with_timeout(Duration::from_secs_f64(cfg.recv_timeout_s));
    if let Some(t) = opts.hooks.tamper() {
        gw = gw.with_tamper(t);
    }
    let gateway = Arc::new(gw);

    let monitor_handle = monitor.map(|f| {
        let rx = collector.subscribe();
        let md = metadata.clone();
        std::thread::Builder::new().name("verifier".into()).spawn(move || f(rx, md)).expect("spawn verifier")
    });

    let exec = execute(ExecSetup {
        cfg: cfg.clone(),
        guest,
        host,
        guest_keys,
        host_keys,
        credentials,
        gateway: gateway.clone(),
        hooks: opts.hooks.clone(),
        kms: Some(kms.clone()),
    });

    let summary = collector.close();
    let verdicts = monitor_handle.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    let model_hash = exec.model_hash();
    let end = JobEnd {
        status: exec.status.as_str().into(),
        detail: exec.status.detail(),
        model_hash: model_hash.clone(),
        envelopes: summary.collected,
    };
    let timing = json!({ "t_job_ns": exec.t_job_ns(), "parties": exec.timings() });
    collector.append(LedgerBody::JobEnd(serde_json::to_value(&end).expect("json")), timing);
    // Timings go to the annotation so the chain itself stays reproducible.
    for v in &verdicts {
        let mut body = v.clone();
        let mut annot = json!({});
        if let (Some(b), Some(a)) = (body.as_object_mut(), annot.as_object_mut()) {
            for k in ["latency_us", "stats"] {
                if let Some(x) = b.remove(k) {
                    a.insert(k.into(), x);
                }
            }
        }
        collector.append(LedgerBody::Verdict(body), annot);
    }
    collector.finish_ledger();
    Ok(JobOutcome {
        job_id: cfg.job_id.clone(),
        status: exec.status.clone(),
        t_job_ns: exec.t_job_ns(),
        model_hash,
        exec,
        verdicts,
        collector: summary,
        gateway: gateway.stats(),
        ledger_path: lpath.to_path_buf(),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::{verify_chain, ChainStatus};
    use crate::parties::config::DatasetSpec;
    use crate::parties::secureboost::SbGuestModel;
    use crate::parties::NoHooks;

    fn cfg(ik: IntersectionKind, tk: TrainKind) -> JobConfig {
        let mut c = JobConfig::example("jt", ik, tk).with_seed(5);
        c.dataset = DatasetSpec::Explicit { rows: 120, guest_dim: 3, host_dim: 4, seed: 2 };
        c.max_iter = 3;
        c.modulus_bits = 256;
        c
    }

    fn run(c: &JobConfig) -> (JobOutcome, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            job_dir: dir.path().join("job"),
            kms: Kms::shared(),
            hooks: Arc::new(NoHooks),
            schema: Schema::default(),
            monitor: None,
        };
        (run_job(c, opts).unwrap(), dir)
    }

    fn aligned(c: &JobConfig) -> (Dataset, Dataset) {
        let (g, h) = load_dataset(&c.dataset).unwrap();
        let hs: std::collections::HashSet<_> = h.ids.iter().collect();
        let mut ids: Vec<String> = g.ids.iter().filter(|i| hs.contains(i)).cloned().collect();
        ids.sort();
        (g.select(&ids).unwrap(), h.select(&ids).unwrap())
    }

    #[test]
    fn lr_job_matches_plaintext_reference() {
        let c = cfg(IntersectionKind::Raw, TrainKind::HeteroLr);
        let (out, _dir) = run(&c);
        assert_eq!(out.status, JobStatus::Completed, "{:?}", out.exec);
        assert_eq!(out.exec.guest.aligned_rows, Some(114));
        let (g, h) = aligned(&c);
        let p = LrParams { max_iter: c.max_iter, learning_rate: c.learning_rate, eps: c.convergence_eps };
        let (rm, rwh) = lr::reference(&g, &h, p);
        let gm: lr::LrGuestModel = serde_json::from_value(out.exec.guest.model.clone().unwrap()).unwrap();
        assert_eq!(gm.losses.len(), 3);
        for (a, b) in gm.losses.iter().zip(&rm.losses) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (a, b) in gm.w.iter().zip(&rm.w) {
            assert!((a - b).abs() < 1e-6);
        }
        let wh: Vec<f64> = serde_json::from_value(out.exec.host.model.clone().unwrap()["w"].clone()).unwrap();
        for (a, b) in wh.iter().zip(&rwh) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(matches!(verify_chain(&out.ledger_path).unwrap(), ChainStatus::Ok { .. }));
        assert!(out.collector.violations.is_empty());
        assert!(out.t_job_ns > 0);
    }

    #[test]
    fn secureboost_rsa_job_matches_reference_tree() {
        let c = cfg(IntersectionKind::Rsa, TrainKind::SecureboostLite);
        let (out, _dir) = run(&c);
        assert_eq!(out.status, JobStatus::Completed, "{:?}", out.exec);
        let (g, h) = aligned(&c);
        let p = SbParams { tree_depth: c.tree_depth, n_bins: c.n_bins };
        let reference = secureboost::reference(&g, &h, p, &c.seed());
        let got: SbGuestModel = serde_json::from_value(out.exec.guest.model.clone().unwrap()).unwrap();
        assert_eq!(got.nodes, reference.nodes);
        assert!(got.nodes.len() >= 3);
    }

    #[test]
    fn same_seed_same_ledger_content() {
        let c = cfg(IntersectionKind::Raw, TrainKind::HeteroLr);
        let (a, _d1) = run(&c);
        let (b, _d2) = run(&c);
        assert_eq!(a.model_hash, b.model_hash);
        let env_hashes = |p: &Path| -> Vec<_> {
            crate::collector::ledger::read_verified(p)
                .unwrap()
                .iter()
                .filter_map(|r| r.body.as_envelope().map(|e| crate::messages::content_hash(&e.unwrap())))
                .collect()
        };
        assert_eq!(env_hashes(&a.ledger_path), env_hashes(&b.ledger_path));
    }

    #[test]
    fn empty_intersection_stops_cleanly() {
        let mut c = cfg(IntersectionKind::Raw, TrainKind::HeteroLr);
        let dir = tempfile::tempdir().unwrap();
        let (g, mut h) = load_dataset(&c.dataset).unwrap();
        for id in h.ids.iter_mut() {
            *id = format!("x{id}");
        }
        let gp = dir.path().join("g.csv");
        let hp = dir.path().join("h.csv");
        g.write_csv(&gp).unwrap();
        h.write_csv(&hp).unwrap();
        c.dataset = DatasetSpec::Csv { guest_csv: gp, host_csv: hp };
        let (out, _d) = run(&c);
        assert_eq!(out.status, JobStatus::Empty);
        assert!(out.exec.guest.model.is_none());
    }
}
