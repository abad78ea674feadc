//! Postponed verification: re-run a recorded job from its ledger, compare
//! every regenerated envelope hash, account what the replay saved.

use super::verdict::{Locus, Mechanism, Severity, Verdict, VerdictClass};
use crate::collector::{read_verified, JobEnd, JobMetadata, LedgerBody, LedgerError, PartyTiming};
use crate::crypto::{RsaKeyPair, SecretKey, Shadow};
use crate::gateway::{thread_cpu_ns, Gateway, LinkProfile};
use crate::kms::{self, KeyKind, KeyPart, Kms, KmsError, SUPERUSER};
use crate::messages::{content_hash, sha256, Envelope, FlowLevel, PartyId, Payload, VarName};
use crate::parties::job::{code_hash, paillier_from_secret, rsa_public_from};
use crate::parties::{execute, Dataset, ExecSetup, IntersectionKind, JobConfig, NoHooks, PartyKeys};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("replay impossible: no job metadata record")]
    NoMetadata,
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("kms: {0}")]
    Kms(#[from] KmsError),
    #[error("data: {0}")]
    Data(String),
}

/// Savings of replay over the live job. Times in ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub job_id: String,
    pub t_job_ns: u64,
    /// CPU time of the replay over all its threads.
    pub t_rep_ns: u64,
    pub t_rep_wall_ns: u64,
    /// Link delay of the original job: total time with at least one
    /// envelope in flight, so concurrent transfers count once.
    pub comm_saved_ns: u64,
    /// Sum of per-party blocking-receive time in the original job.
    pub wait_saved_ns: u64,
    pub r_hg: f64,
    pub rows: usize,
    pub guest_dim: usize,
    pub host_dim: usize,
    pub messages: u64,
    pub reduction_rate: f64,
    pub calc_reduction_rate: f64,
}

impl OverheadReport {
    pub fn bound_ratio(&self) -> f64 {
        self.t_rep_ns as f64 / self.t_job_ns.max(1) as f64
    }
}

/// First point where recorded and regenerated traffic disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub ledger_index: Option<u64>,
    pub src: String,
    pub task: String,
    pub variable: String,
    pub iteration: Option<u32>,
    /// Hex; empty when one side has no message there.
    pub recorded: String,
    pub replayed: String,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub job_id: String,
    pub verdicts: Vec<Verdict>,
    pub report: Option<OverheadReport>,
    pub divergence: Option<Divergence>,
    pub compared: u64,
    pub matched: u64,
    pub model_matches: Option<bool>,
}

impl ReplayOutcome {
    pub fn conformant(&self) -> bool {
        !self.verdicts.iter().any(Verdict::is_alarm)
    }

    pub fn match_rate(&self) -> f64 {
        if self.compared == 0 {
            1.0
        } else {
            self.matched as f64 / self.compared as f64
        }
    }
}

struct Recorded {
    index: u64,
    hash: [u8; 32],
    env: Envelope,
}

fn task_and_iter(env: &Envelope) -> (String, Option<u32>) {
    if env.flow == FlowLevel::Control {
        if let Ok(Payload::Control(c)) = Payload::decode(&env.payload) {
            return (c.component, Some(c.iteration));
        }
        return (env.task_id.clone(), None);
    }
    (env.task_id.clone(), VarName::parse(&env.variable).map(|v| v.iteration))
}

fn divergence(index: Option<u64>, env: &Envelope, recorded: String, replayed: String) -> Divergence {
    let (task, iteration) = task_and_iter(env);
    Divergence { ledger_index: index, src: env.src.to_string(), task, variable: env.variable.clone(), iteration, recorded, replayed }
}

/// Compares per sender in order. Returns the earliest divergence by ledger
/// position plus (compared, matched) counts.
fn compare(recorded: &[Recorded], replayed: &[Envelope], end_index: u64) -> (Option<Divergence>, u64, u64) {
    let mut rec_by: BTreeMap<String, Vec<&Recorded>> = BTreeMap::new();
    for r in recorded {
        rec_by.entry(r.env.src.to_string()).or_default().push(r);
    }
    let mut rep_by: BTreeMap<String, Vec<&Envelope>> = BTreeMap::new();
    for e in replayed {
        rep_by.entry(e.src.to_string()).or_default().push(e);
    }
    let mut srcs: Vec<&String> = rec_by.keys().chain(rep_by.keys()).collect();
    srcs.sort();
    srcs.dedup();
    let (mut compared, mut matched) = (0u64, 0u64);
    let mut best: Option<(u64, Divergence)> = None;
    let mut offer = |key: u64, d: Divergence| {
        if best.as_ref().map_or(true, |(k, _)| key < *k) {
            best = Some((key, d));
        }
    };
    for src in srcs {
        let rec = rec_by.get(src).map(Vec::as_slice).unwrap_or(&[]);
        let rep = rep_by.get(src).map(Vec::as_slice).unwrap_or(&[]);
        let mut found = false;
        for (r, e) in rec.iter().zip(rep.iter()) {
            compared += 1;
            let h = content_hash(e);
            if h == r.hash {
                matched += 1;
            } else if !found {
                found = true;
                offer(r.index, divergence(Some(r.index), &r.env, hex::encode(r.hash), hex::encode(h)));
            }
        }
        compared += rec.len().abs_diff(rep.len()) as u64;
        if found {
            continue;
        }
        if rec.len() > rep.len() {
            let r = rec[rep.len()];
            offer(r.index, divergence(Some(r.index), &r.env, hex::encode(r.hash), String::new()));
        } else if rep.len() > rec.len() {
            // Missing from the ledger: any recorded mismatch outranks it.
            let e = rep[rec.len()];
            offer(end_index, divergence(None, e, String::new(), hex::encode(content_hash(e))));
        }
    }
    (best.map(|(_, d)| d), compared, matched)
}

/// Total length covered by a set of `[start, end)` intervals.
pub fn union_length(mut spans: Vec<(u64, u64)>) -> u64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in spans {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

fn load_party(job_dir: &Path, md: &JobMetadata, party: &str) -> Result<(Dataset, bool), ReplayError> {
    let dref = md
        .data
        .iter()
        .find(|d| d.party == party)
        .ok_or_else(|| ReplayError::Metadata(format!("no data reference for {party}")))?;
    let ds = Dataset::read_csv(&job_dir.join(&dref.path)).map_err(|e| ReplayError::Data(e.to_string()))?;
    let ok = hex::encode(ds.content_hash()) == dref.content_hash;
    Ok((ds, ok))
}

fn keys_for(kms: &Kms, cfg: &JobConfig) -> Result<(PartyKeys, PartyKeys), ReplayError> {
    let cred = kms.issue_credential(SUPERUSER, &cfg.job_id)?;
    let pid = kms::key_id(&cfg.job_id, KeyKind::Paillier);
    let rid = kms::key_id(&cfg.job_id, KeyKind::Rsa);
    let sk: SecretKey =
        paillier_from_secret(&kms.get_key(&pid, &cred, KeyPart::Secret)?).map_err(|e| ReplayError::Metadata(e.to_string()))?;
    let rsa = if matches!(cfg.intersection(), Some((_, IntersectionKind::Rsa))) {
        let pair = RsaKeyPair::decode(&kms.get_key(&rid, &cred, KeyPart::Secret)?)
            .map_err(|e| ReplayError::Metadata(format!("rsa secret: {e}")))?;
        let public = rsa_public_from(&kms.get_key(&rid, &cred, KeyPart::Public)?);
        Some((public, pair))
    } else {
        None
    };
    // Both parties get the secret and one shared shadow, so ciphertexts
    // made on either side can be evaluated from their exponents.
    let shadow = Some(Arc::new(Shadow::new()));
    let guest = PartyKeys {
        paillier: sk.public.clone(),
        paillier_secret: Some(sk.clone()),
        rsa: rsa.as_ref().map(|r| r.0.clone()),
        rsa_key_id: rid.clone(),
        rsa_secret: None,
        shadow: shadow.clone(),
    };
    let host = PartyKeys {
        paillier: sk.public.clone(),
        paillier_secret: Some(sk),
        rsa: rsa.as_ref().map(|r| r.1.public.clone()),
        rsa_key_id: rid,
        rsa_secret: rsa.map(|r| r.1),
        shadow,
    };
    Ok((guest, host))
}

/// Replays the job recorded at `ledger`, reading data files under `job_dir`.
pub fn replay(ledger: &Path, job_dir: &Path, kms: &Kms) -> Result<ReplayOutcome, ReplayError> {
    let wall = Instant::now();
    let cpu0 = thread_cpu_ns();
    let records = match read_verified(ledger) {
        Ok(r) => r,
        Err(LedgerError::Broken { index, reason }) => {
            let job_id = String::new();
            let v = Verdict::alarm(&job_id, VerdictClass::ChainTamper, Mechanism::Replay, format!("chain broken at record {index}: {reason}"))
                .at(Locus { ledger_index: Some(index), ..Locus::default() });
            return Ok(ReplayOutcome {
                job_id,
                verdicts: vec![v],
                report: None,
                divergence: None,
                compared: 0,
                matched: 0,
                model_matches: None,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let md: JobMetadata = records
        .iter()
        .find_map(|r| match &r.body {
            LedgerBody::JobMetadata(v) => Some(serde_json::from_value(v.clone())),
            _ => None,
        })
        .ok_or(ReplayError::NoMetadata)?
        .map_err(|e| ReplayError::Metadata(e.to_string()))?;
    let job = md.job_id.clone();
    let cfg_bytes = serde_json::to_vec(&md.config).expect("json");
    if hex::encode(sha256(&cfg_bytes)) != md.config_hash {
        return Err(ReplayError::Metadata("config hash does not match recorded config".into()));
    }
    let cfg: JobConfig = serde_json::from_value(md.config.clone()).map_err(|e| ReplayError::Metadata(e.to_string()))?;
    let mut verdicts = Vec::new();
    if md.code_hash != code_hash() {
        verdicts.push(Verdict::alarm(&job, VerdictClass::CodeMismatch, Mechanism::Replay, "recorded code hash differs from replayer, forensic mode"));
    }
    let (guest, guest_ok) = load_party(job_dir, &md, "guest")?;
    let (host, host_ok) = load_party(job_dir, &md, "host")?;
    for (party, ok) in [("guest", guest_ok), ("host", host_ok)] {
        if !ok {
            verdicts.push(Verdict::alarm(&job, VerdictClass::DataMismatch, Mechanism::Replay, format!("{party} data hash differs from record, forensic mode")));
        }
    }

    let mut recorded = Vec::new();
    let mut spans = Vec::new();
    let mut end: Option<(JobEnd, u64, Vec<PartyTiming>)> = None;
    let mut end_index = records.len() as u64;
    for r in &records {
        match &r.body {
            LedgerBody::Envelope(_) => {
                let env = r
                    .body
                    .as_envelope()
                    .expect("envelope body")
                    .map_err(|e| ReplayError::Metadata(format!("record {}: {e}", r.index)))?;
                let sent = r.annotation["sent_at"].as_u64().unwrap_or(0);
                let recv = r.annotation["recv_at"].as_u64().unwrap_or(0);
                spans.push((sent, recv.max(sent)));
                recorded.push(Recorded { index: r.index, hash: r.body_hash(), env });
            }
            LedgerBody::JobEnd(v) => {
                let je: JobEnd = serde_json::from_value(v.clone()).map_err(|e| ReplayError::Metadata(e.to_string()))?;
                let t = r.annotation["t_job_ns"].as_u64().unwrap_or(0);
                let parties = serde_json::from_value(r.annotation["parties"].clone()).unwrap_or_default();
                end = Some((je, t, parties));
                end_index = r.index;
            }
            _ => {}
        }
    }

    let comm_saved = union_length(spans);
    let mut credentials = BTreeMap::new();
    for p in [PartyId::Guest, PartyId::Host, PartyId::Coordinator] {
        let c = recorded.iter().find(|r| r.env.src == p).map(|r| r.env.credential.clone()).unwrap_or_default();
        credentials.insert(p, c);
    }
    let (guest_keys, host_keys) = keys_for(kms, &cfg)?;
    let (rows, guest_dim, host_dim) = (guest.rows(), guest.dim, host.dim);
    let gateway = Arc::new(
        Gateway::new(LinkProfile::zero(), None)
            .with_capture()
            .with_timeout(Duration::from_secs_f64(cfg.recv_timeout_s)),
    );
    let exec = execute(ExecSetup {
        cfg: cfg.clone(),
        guest,
        host,
        guest_keys,
        host_keys,
        credentials,
        gateway: gateway.clone(),
        hooks: Arc::new(NoHooks),
        kms: None,
    });
    let replayed = gateway.take_capture();
    let (div, compared, matched) = compare(&recorded, &replayed, end_index);

    let model_matches = end.as_ref().map(|(je, _, _)| je.model_hash == exec.model_hash());
    match &div {
        Some(d) => {
            let msg = format!(
                "first divergence at {} from {}: recorded {} replayed {}",
                d.variable,
                d.src,
                if d.recorded.is_empty() { "nothing" } else { &d.recorded[..16] },
                if d.replayed.is_empty() { "nothing" } else { &d.replayed[..16] },
            );
            let mut v = Verdict::alarm(&job, VerdictClass::ReplayDivergence, Mechanism::Replay, msg).at(Locus {
                task: Some(d.task.clone()),
                iteration: d.iteration,
                variable: Some(d.variable.clone()),
                ledger_index: d.ledger_index,
                ..Locus::default()
            });
            v.stats = json!({ "recorded": d.recorded, "replayed": d.replayed });
            verdicts.push(v);
        }
        None if model_matches == Some(false) => {
            verdicts.push(Verdict::alarm(&job, VerdictClass::ModelMismatch, Mechanism::Replay, "final model hash differs"));
        }
        None if end.is_none() => {
            verdicts.push(Verdict::new(&job, VerdictClass::Notice, Mechanism::Replay, Severity::Warning, "ledger has no job end record"));
        }
        None => {}
    }

    let driver_cpu = thread_cpu_ns().saturating_sub(cpu0);
    let t_rep = driver_cpu + exec.guest.timing.cpu_ns + exec.host.timing.cpu_ns;
    let report = end.map(|(_, t_job, parties)| {
        let wait: u64 = parties.iter().filter(|p| p.party != "coordinator").map(|p| p.wait_ns).sum();
        let t = t_job.max(1) as f64;
        OverheadReport {
            job_id: job.clone(),
            t_job_ns: t_job,
            t_rep_ns: t_rep.max(1),
            t_rep_wall_ns: wall.elapsed().as_nanos() as u64,
            comm_saved_ns: comm_saved,
            wait_saved_ns: wait,
            r_hg: host_dim as f64 / guest_dim.max(1) as f64,
            rows,
            guest_dim,
            host_dim,
            messages: recorded.len() as u64,
            reduction_rate: (t_job as f64 - t_rep as f64) / t,
            calc_reduction_rate: wait as f64 / t,
        }
    });
    let alarms = verdicts.iter().filter(|v| v.is_alarm()).count();
    let mut summary = if alarms == 0 {
        Verdict::new(&job, VerdictClass::Conformant, Mechanism::Replay, Severity::Info, format!("{matched}/{compared} message hashes reproduced, model hash matches"))
    } else {
        Verdict::new(&job, VerdictClass::Notice, Mechanism::Replay, Severity::Info, format!("{matched}/{compared} message hashes reproduced, {alarms} alarm(s)"))
    };
    summary.stats = json!({ "report": report, "compared": compared, "matched": matched });
    verdicts.push(summary);
    Ok(ReplayOutcome { job_id: job, verdicts, report, divergence: div, compared, matched, model_matches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::Schema;
    use crate::parties::{run_job, DatasetSpec, RunOptions, TrainKind};

    fn recorded(ik: IntersectionKind, tk: TrainKind, kms: Arc<Kms>, dir: &Path) -> std::path::PathBuf {
        let mut c = JobConfig::example("rp", ik, tk).with_seed(11);
        c.dataset = DatasetSpec::Explicit { rows: 50, guest_dim: 2, host_dim: 3, seed: 9 };
        c.max_iter = 3;
        c.modulus_bits = 256;
        let out = run_job(&c, RunOptions { job_dir: dir.to_path_buf(), kms, hooks: Arc::new(NoHooks), schema: Schema::default(), monitor: None })
            .unwrap();
        out.ledger_path
    }

    #[test]
    fn honest_jobs_replay_exactly() {
        for ik in [IntersectionKind::Raw, IntersectionKind::Rsa] {
            for tk in [TrainKind::HeteroLr, TrainKind::SecureboostLite] {
                let kms = Kms::shared();
                let dir = tempfile::tempdir().unwrap();
                let l = recorded(ik, tk, kms.clone(), dir.path());
                let out = replay(&l, dir.path(), &kms).unwrap();
                assert!(out.conformant(), "{ik:?} {tk:?}: {:?}", out.divergence);
                assert_eq!(out.match_rate(), 1.0);
                assert!(out.compared > 10);
                assert_eq!(out.model_matches, Some(true));
                let rep = out.report.unwrap();
                assert!(rep.t_rep_ns > 0 && rep.t_job_ns > 0);
            }
        }
    }

    #[test]
    fn overlapping_spans_count_once() {
        assert_eq!(union_length(vec![]), 0);
        assert_eq!(union_length(vec![(0, 10), (5, 20), (30, 40), (35, 36)]), 30);
        assert_eq!(union_length(vec![(7, 7), (1, 2)]), 1);
    }

    #[test]
    fn flipped_byte_is_chain_tamper() {
        let kms = Kms::shared();
        let dir = tempfile::tempdir().unwrap();
        let l = recorded(IntersectionKind::Raw, TrainKind::HeteroLr, kms.clone(), dir.path());
        let mut bytes = std::fs::read(&l).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&l, bytes).unwrap();
        let out = replay(&l, dir.path(), &kms).unwrap();
        assert_eq!(out.verdicts[0].class, VerdictClass::ChainTamper);
        assert!(out.report.is_none());
    }

    #[test]
    fn edited_data_file_is_reported() {
        let kms = Kms::shared();
        let dir = tempfile::tempdir().unwrap();
        let l = recorded(IntersectionKind::Raw, TrainKind::HeteroLr, kms.clone(), dir.path());
        let p = dir.path().join("data/host.csv");
        let mut ds = Dataset::read_csv(&p).unwrap();
        ds.features[0][0] += 1.0;
        ds.write_csv(&p).unwrap();
        let out = replay(&l, dir.path(), &kms).unwrap();
        assert!(out.verdicts.iter().any(|v| v.class == VerdictClass::DataMismatch));
        assert!(out.divergence.is_some());
    }
}
