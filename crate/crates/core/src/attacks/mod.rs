//! Fault injectors for threat models A01-A08 and the detection matrix runner.

pub mod matrix;

pub use matrix::{run_matrix, run_scenario, DetectionMatrix, DetectionRow, MatrixError, ModeResult, Modes};

use crate::analyzer::{Attack, Mechanism};
use crate::gateway::TamperFn;
use crate::kms::{self, KeyKind, KeyPart, Kms};
use crate::messages::{
    Command, ControlCommand, Envelope, FlowLevel, Partition, PartyId, Payload, TransferMode, VarName, TAG_EXECUTABLE_BLOB,
};
use crate::parties::{Dataset, ExtraSend, Hooks, JobConfig, TrainKind};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("{0} does not apply to this job: {1}")]
    Incompatible(String, String),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// A05: protocol code changed.
    Code,
    /// A05: data changed after its hash was recorded.
    Data,
    /// A06: perturbed update during training.
    InTraining,
    /// A06: data poisoned before its hash was recorded.
    PrePoisoned,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Code => "code",
            Variant::Data => "data",
            Variant::InTraining => "in_training",
            Variant::PrePoisoned => "pre_poisoned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLocus {
    Party(PartyId),
    Channel,
    Kms,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    #[serde(default)]
    pub iteration: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Gradient scale (A05 code) or noise sigma (A06 in training).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    /// Name used for a forged variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub id: Attack,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub locus: AttackLocus,
    #[serde(default)]
    pub trigger: Trigger,
    #[serde(default)]
    pub params: Params,
}

impl AttackSpec {
    pub fn new(id: Attack, variant: Option<Variant>, locus: AttackLocus, iteration: u32) -> AttackSpec {
        AttackSpec { id, variant, locus, trigger: Trigger { iteration }, params: Params::default() }
    }

    pub fn magnitude(mut self, m: f64) -> AttackSpec {
        self.params.magnitude = Some(m);
        self
    }

    /// "A06.in_training", "A02", ...
    pub fn label(&self) -> String {
        match self.variant {
            Some(v) => format!("{}.{}", self.id, v.as_str()),
            None => self.id.to_string(),
        }
    }

    /// Where an alarm for this attack should come from.
    pub fn expected_mechanisms(&self) -> Vec<Mechanism> {
        match self.id {
            Attack::A01 | Attack::A02 | Attack::A03 | Attack::A04 => vec![Mechanism::Fsm],
            Attack::A05 | Attack::A06 => vec![Mechanism::Rules, Mechanism::Replay],
            Attack::A07 => vec![Mechanism::Rules],
            Attack::A08 => vec![Mechanism::Kms],
        }
    }

    /// Poisoned inputs recorded as honest data are out of reach.
    pub fn expect_detected(&self) -> bool {
        self.variant != Some(Variant::PrePoisoned)
    }

    /// One scenario per attack variant.
    pub fn standard_suite() -> Vec<AttackSpec> {
        use AttackLocus::*;
        vec![
            AttackSpec::new(Attack::A01, None, Party(PartyId::External("mallory".into())), 0),
            AttackSpec::new(Attack::A02, None, Channel, 0),
            AttackSpec::new(Attack::A03, None, Party(PartyId::Guest), 1),
            AttackSpec::new(Attack::A04, None, Channel, 1),
            AttackSpec::new(Attack::A05, Some(Variant::Code), Party(PartyId::Host), 1).magnitude(1.5),
            AttackSpec::new(Attack::A05, Some(Variant::Data), Party(PartyId::Host), 0),
            AttackSpec::new(Attack::A06, Some(Variant::InTraining), Party(PartyId::Host), 2).magnitude(0.5),
            AttackSpec::new(Attack::A06, Some(Variant::PrePoisoned), Party(PartyId::Host), 0),
            AttackSpec::new(Attack::A07, None, Party(PartyId::Host), 1),
            AttackSpec::new(Attack::A08, None, Kms, 0),
        ]
    }
}

pub fn load_scenarios(path: &Path) -> Result<Vec<AttackSpec>, AttackError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// What an injector changed. Kept away from the analyzer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub what: String,
    pub party: String,
    pub task: Option<String>,
    pub iteration: Option<u32>,
    /// First message whose content carries the change.
    pub variable: Option<String>,
}

type TruthLog = Arc<Mutex<Vec<GroundTruth>>>;

/// Hooks implementing exactly one attack.
pub struct Injector {
    spec: AttackSpec,
    job_id: String,
    intersect: Option<String>,
    train: String,
    truth: TruthLog,
}

fn need(ok: bool, spec: &AttackSpec, why: &str) -> Result<(), AttackError> {
    if ok {
        Ok(())
    } else {
        Err(AttackError::Incompatible(spec.label(), why.into()))
    }
}

/// Checks `spec` against the job and builds its injector.
pub fn inject(spec: &AttackSpec, cfg: &JobConfig) -> Result<Injector, AttackError> {
    let train = cfg.train().map(|(n, k)| (n.to_string(), k));
    let lr = matches!(train, Some((_, TrainKind::HeteroLr)));
    let intersect = cfg.intersection().map(|(n, _)| n.to_string());
    match (spec.id, spec.variant) {
        (Attack::A05, None) | (Attack::A06, None) => need(false, spec, "variant required")?,
        (Attack::A05 | Attack::A06, _) => {}
        (_, Some(_)) => need(false, spec, "takes no variant")?,
        _ => {}
    }
    need(train.is_some(), spec, "no training component")?;
    match (spec.id, spec.variant) {
        (Attack::A02, _) => need(intersect.is_some(), spec, "no intersection component")?,
        (Attack::A04, _) | (Attack::A05, Some(Variant::Code)) | (Attack::A06, Some(Variant::InTraining)) => {
            need(lr, spec, "needs hetero-LR")?;
            need(spec.trigger.iteration < cfg.max_iter, spec, "trigger beyond max_iter")?;
        }
        (Attack::A03 | Attack::A07, _) if !lr => need(spec.trigger.iteration == 0, spec, "only iteration 0 exists")?,
        _ => {}
    }
    Ok(Injector {
        spec: spec.clone(),
        job_id: cfg.job_id.clone(),
        intersect,
        train: train.map(|t| t.0).unwrap_or_default(),
        truth: Arc::new(Mutex::new(Vec::new())),
    })
}

fn note(log: &TruthLog, spec: &AttackSpec, what: String, party: &str, task: Option<&str>, iteration: Option<u32>, variable: Option<String>) {
    log.lock().unwrap().push(GroundTruth {
        scenario: spec.label(),
        what,
        party: party.into(),
        task: task.map(str::to_string),
        iteration,
        variable,
    });
}

/// Column of `host` most correlated with the guest labels over shared ids.
fn label_column(guest: &Dataset, host: &Dataset) -> Option<usize> {
    let labels = guest.labels.as_ref()?;
    let by_id: HashMap<&str, f64> = guest.ids.iter().map(String::as_str).zip(labels.iter().map(|&y| y as f64)).collect();
    let rows: Vec<(usize, f64)> = host.ids.iter().enumerate().filter_map(|(i, id)| by_id.get(id.as_str()).map(|&y| (i, y))).collect();
    if rows.len() < 2 {
        return None;
    }
    let n = rows.len() as f64;
    let my = rows.iter().map(|r| r.1).sum::<f64>() / n;
    (0..host.dim)
        .map(|j| {
            let mx = rows.iter().map(|&(i, _)| host.features[i][j]).sum::<f64>() / n;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for &(i, y) in &rows {
                let dx = host.features[i][j] - mx;
                sxy += dx * (y - my);
                sxx += dx * dx;
                syy += (y - my) * (y - my);
            }
            let c = if sxx > 0.0 && syy > 0.0 { (sxy / (sxx * syy).sqrt()).abs() } else { 0.0 };
            (j, c)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(j, _)| j)
}

impl Injector {
    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.truth.lock().unwrap().clone()
    }

    pub fn write_ground_truth(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(&self.ground_truth()).expect("json"))
    }

    fn var(&self, name: &str, iter: u32) -> String {
        VarName::new(&self.train, name, iter).to_string()
    }

    fn is(&self, id: Attack, variant: Option<Variant>) -> bool {
        self.spec.id == id && self.spec.variant == variant
    }

    fn log(&self, what: String, party: &str, iteration: Option<u32>, variable: Option<String>) {
        note(&self.truth, &self.spec, what, party, Some(&self.train), iteration, variable);
    }
}

impl Hooks for Injector {
    fn label(&self) -> String {
        self.spec.label()
    }

    fn before_metadata(&self, guest: &mut Dataset, host: &mut Dataset) {
        if !self.is(Attack::A06, Some(Variant::PrePoisoned)) {
            return;
        }
        let Some(j) = label_column(guest, host) else { return };
        for row in host.features.iter_mut() {
            row[j] = -row[j];
        }
        note(&self.truth, &self.spec, format!("host column {j} negated before hashing"), "host", None, None, None);
    }

    fn after_metadata(&self, _guest: &mut Dataset, host: &mut Dataset) {
        if !self.is(Attack::A05, Some(Variant::Data)) {
            return;
        }
        host.features.reverse();
        // Host encrypts zeros at iteration 0, so the first visible effect is the masked gradient.
        self.log("host rows permuted after hashing".into(), "host", Some(0), Some(self.var("masked_grad", 0)));
    }

    fn host_gradient(&self, iter: u32, grad: &mut [f64]) {
        if !self.is(Attack::A05, Some(Variant::Code)) || iter < self.spec.trigger.iteration {
            return;
        }
        let k = self.spec.params.magnitude.unwrap_or(1.5);
        grad.iter_mut().for_each(|g| *g *= k);
        if iter == self.spec.trigger.iteration {
            self.log(format!("host gradient scaled by {k}"), "host", Some(iter + 1), Some(self.var("host_forward", iter + 1)));
        }
    }

    fn host_mask(&self, iter: u32, mask: &mut [f64]) {
        if !self.is(Attack::A06, Some(Variant::InTraining)) || iter != self.spec.trigger.iteration {
            return;
        }
        let sigma = self.spec.params.magnitude.unwrap_or(0.5);
        let Ok(dist) = Normal::new(0.0, sigma) else { return };
        let mut rng = ChaCha20Rng::seed_from_u64(self.spec.params.seed);
        mask.iter_mut().for_each(|m| *m += dist.sample(&mut rng));
        self.log(format!("gaussian noise sigma={sigma} on host update"), "host", Some(iter), Some(self.var("masked_grad", iter)));
    }

    fn extra_sends(&self, me: &PartyId, task: &str, iter: u32, labels: Option<&[f64]>) -> Vec<ExtraSend> {
        if task != self.train || iter != self.spec.trigger.iteration {
            return Vec::new();
        }
        match self.spec.id {
            Attack::A03 if *me == PartyId::Guest => {
                let Some(y) = labels else { return Vec::new() };
                let name = self.spec.params.variable.as_deref().unwrap_or("labels_leak");
                let variable = self.var(name, iter);
                self.log("plaintext labels sent to host".into(), "guest", Some(iter), Some(variable.clone()));
                vec![ExtraSend {
                    dst: PartyId::Host,
                    variable,
                    flow: FlowLevel::Algorithm,
                    transfer_mode: TransferMode::Stream,
                    payload: Payload::PlainFloatVector(y.to_vec()).encode(),
                }]
            }
            Attack::A07 if *me == PartyId::Host => {
                let name = self.spec.params.variable.as_deref().unwrap_or("cmd");
                let variable = self.var(name, iter);
                let mut payload = vec![TAG_EXECUTABLE_BLOB];
                payload.extend_from_slice(b"\x80\x04cos\nsystem\n(S'sh -c id'\ntR.");
                self.log("executable blob sent to guest".into(), "host", Some(iter), Some(variable.clone()));
                vec![ExtraSend { dst: PartyId::Guest, variable, flow: FlowLevel::Data, transfer_mode: TransferMode::Stream, payload }]
            }
            _ => Vec::new(),
        }
    }

    fn on_train_start(&self, me: &PartyId, kms: &Kms, job_id: &str, credential: &[u8]) {
        if self.spec.id != Attack::A08 || *me != PartyId::Host {
            return;
        }
        let r = kms.get_key(&kms::key_id(job_id, KeyKind::Paillier), credential, KeyPart::Secret);
        let what = match r {
            Ok(_) => "host read the guest secret key".to_string(),
            Err(e) => format!("host secret key request refused: {e}"),
        };
        note(&self.truth, &self.spec, what, "host", None, None, None);
    }

    fn coordinator_inject(&self, task: &str) -> Vec<Envelope> {
        if self.spec.id != Attack::A01 || task != self.train {
            return Vec::new();
        }
        let who = match &self.spec.locus {
            AttackLocus::Party(p @ PartyId::External(_)) => p.clone(),
            _ => PartyId::External("mallory".into()),
        };
        let cmd = ControlCommand::new(Command::Stop, task).detail("forged");
        self.log(format!("{who} sent stop with a forged credential"), &who.to_string(), None, Some(Command::Stop.variable().to_string()));
        vec![Envelope {
            job_id: self.job_id.clone(),
            task_id: task.to_string(),
            seq: 0,
            flow: FlowLevel::Control,
            variable: Command::Stop.variable().to_string(),
            src: who,
            dst: PartyId::Guest,
            transfer_mode: TransferMode::Unary,
            partition: Partition::SINGLE,
            credential: b"forged-token".to_vec(),
            payload: Payload::Control(cmd).encode(),
            sent_at: 0,
            recv_at: 0,
        }]
    }

    fn tamper(&self) -> Option<TamperFn> {
        let log = self.truth.clone();
        let spec = self.spec.clone();
        match self.spec.id {
            Attack::A02 => {
                let task = self.intersect.clone()?;
                Some(Arc::new(move |env: &mut Envelope| {
                    if env.flow != FlowLevel::Control || env.dst != PartyId::Host || env.task_id != task {
                        return false;
                    }
                    let Ok(Payload::Control(mut c)) = Payload::decode(&env.payload) else { return false };
                    if c.command != Command::Start {
                        return false;
                    }
                    c.command = Command::Stop;
                    env.variable = Command::Stop.variable().to_string();
                    env.payload = Payload::Control(c).encode();
                    note(&log, &spec, "start rewritten to stop in transit".into(), "channel", Some(&task), None, Some(env.variable.clone()));
                    true
                }))
            }
            Attack::A04 => {
                let target = self.var("stop_flag", self.spec.trigger.iteration);
                let task = self.train.clone();
                Some(Arc::new(move |env: &mut Envelope| {
                    if env.variable != target || env.src != PartyId::Guest || env.dst != PartyId::Host {
                        return false;
                    }
                    let flipped = Payload::flag(true).encode();
                    if env.payload == flipped {
                        return false;
                    }
                    env.payload = flipped;
                    note(&log, &spec, "stop flag forced to 1".into(), "channel", Some(&task), Some(spec.trigger.iteration), Some(target.clone()));
                    true
                }))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests;
