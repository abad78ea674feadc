//! Runs scenarios end to end and tabulates which mechanism caught what.

use super::{inject, AttackError, AttackSpec, GroundTruth};
use crate::analyzer::verifier::{parse_verdicts, SetupError};
use crate::analyzer::{monitor, replay, Attack, Mechanism, Verdict, VerdictClass, VerifierSpec};
use crate::analyzer::replay::ReplayError;
use crate::kms::Kms;
use crate::parties::{run_job, Hooks, JobConfig, JobError, NoHooks, RunOptions};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modes {
    pub realtime: bool,
    pub postponed: bool,
}

impl Modes {
    pub const BOTH: Modes = Modes { realtime: true, postponed: true };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub ran: bool,
    pub alarms: Vec<Verdict>,
    pub mechanisms: BTreeSet<Mechanism>,
    /// Realtime: collection to verdict. Postponed: replay wall time.
    pub latency_us: Option<u64>,
}

impl ModeResult {
    fn from_verdicts(verdicts: Vec<Verdict>) -> ModeResult {
        let alarms: Vec<Verdict> = verdicts.into_iter().filter(Verdict::is_alarm).collect();
        ModeResult {
            ran: true,
            mechanisms: alarms.iter().map(|v| v.mechanism).collect(),
            latency_us: alarms.first().and_then(|v| v.latency_us),
            alarms,
        }
    }

    pub fn caught_by(&self, expected: &[Mechanism]) -> bool {
        self.mechanisms.iter().any(|m| expected.contains(m))
    }

    fn summary(&self) -> String {
        if !self.ran {
            return "-".into();
        }
        if self.alarms.is_empty() {
            return "none".into();
        }
        let m: Vec<String> = self.mechanisms.iter().map(|m| m.to_string()).collect();
        format!("{} ({})", self.alarms.len(), m.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    /// "honest" for the run without an injector.
    pub scenario: String,
    pub attack: Option<Attack>,
    pub expected: Vec<Mechanism>,
    pub expect_detected: bool,
    pub status: String,
    pub realtime: ModeResult,
    pub postponed: ModeResult,
    pub detected: bool,
    /// Some alarm points at the message the injector changed. None when the
    /// ground truth names no message.
    pub locus_ok: Option<bool>,
    pub truth_file: Option<PathBuf>,
}

impl DetectionRow {
    pub fn as_expected(&self) -> bool {
        if self.attack.is_none() {
            return self.realtime.alarms.is_empty() && self.postponed.alarms.is_empty();
        }
        self.detected == self.expect_detected && self.locus_ok != Some(false)
    }

    pub fn alarms(&self) -> impl Iterator<Item = &Verdict> {
        self.realtime.alarms.iter().chain(&self.postponed.alarms)
    }

    pub fn has_class(&self, class: VerdictClass) -> bool {
        self.alarms().any(|v| v.class == class)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatrix {
    pub rows: Vec<DetectionRow>,
}

impl DetectionMatrix {
    pub fn row(&self, scenario: &str) -> Option<&DetectionRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    pub fn all_as_expected(&self) -> bool {
        self.rows.iter().all(DetectionRow::as_expected)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<14} {:<16} {:<16} {:<9} {:<6} {}",
            "scenario", "expected", "realtime", "postponed", "detected", "locus", "ok"
        );
        for r in &self.rows {
            let exp: Vec<String> = r.expected.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(
                s,
                "{:<16} {:<14} {:<16} {:<16} {:<9} {:<6} {}",
                r.scenario,
                if exp.is_empty() { "-".into() } else { exp.join("+") },
                r.realtime.summary(),
                r.postponed.summary(),
                if r.detected { "yes" } else { "no" },
                match r.locus_ok {
                    Some(true) => "yes",
                    Some(false) => "no",
                    None => "-",
                },
                if r.as_expected() { "ok" } else { "UNEXPECTED" }
            );
        }
        s
    }
}

fn locus_matches(v: &Verdict, t: &GroundTruth) -> bool {
    let var = t.variable.as_deref();
    if var.is_none() || v.locus.variable.as_deref() != var {
        return false;
    }
    match (t.iteration, v.locus.iteration) {
        (Some(a), Some(b)) => a == b,
        _ => true,
    }
}

/// Runs one scenario, or an honest job when `spec` is None. Ground truth
/// goes under `dir/truth`, never inside the job directory.
pub fn run_scenario(base: &JobConfig, spec: Option<&AttackSpec>, modes: Modes, dir: &Path) -> Result<DetectionRow, MatrixError> {
    let mut cfg = base.clone();
    let label = spec.map_or("honest".to_string(), AttackSpec::label);
    cfg.job_id = format!("{}-{}", base.job_id, label.replace('.', "-").to_lowercase());
    let injector = spec.map(|s| inject(s, &cfg)).transpose()?.map(Arc::new);
    let hooks: Arc<dyn Hooks> = match &injector {
        Some(i) => i.clone(),
        None => Arc::new(NoHooks),
    };
    let kms = Kms::shared();
    let job_dir = dir.join(&cfg.job_id);
    if job_dir.exists() {
        std::fs::remove_dir_all(&job_dir)?;
    }
    let vspec = VerifierSpec::for_job(&cfg)?;
    let schema = vspec.schema.clone();
    let mon = modes.realtime.then(|| monitor(vspec, kms.clone()));
    let opts = RunOptions { job_dir: job_dir.clone(), kms: kms.clone(), hooks, schema, monitor: mon };
    let out = run_job(&cfg, opts)?;
    tracing::info!(scenario = %label, status = out.status.as_str(), "scenario finished");

    let realtime = if modes.realtime { ModeResult::from_verdicts(parse_verdicts(&out.verdicts)) } else { ModeResult::default() };
    let postponed = if modes.postponed {
        let t0 = Instant::now();
        let rep = replay(&out.ledger_path, &job_dir, &kms)?;
        let mut m = ModeResult::from_verdicts(rep.verdicts);
        m.latency_us = Some(t0.elapsed().as_micros() as u64);
        m
    } else {
        ModeResult::default()
    };

    let (truth, truth_file) = match &injector {
        Some(i) => {
            let p = dir.join("truth").join(format!("{}.json", cfg.job_id));
            i.write_ground_truth(&p)?;
            (i.ground_truth(), Some(p))
        }
        None => (Vec::new(), None),
    };
    let expected = spec.map(AttackSpec::expected_mechanisms).unwrap_or_default();
    let detected = realtime.caught_by(&expected) || postponed.caught_by(&expected);
    let pointed: Vec<&GroundTruth> = truth.iter().filter(|t| t.variable.is_some()).collect();
    let locus_ok = if detected && !pointed.is_empty() {
        let alarms: Vec<&Verdict> = realtime.alarms.iter().chain(&postponed.alarms).filter(|v| expected.contains(&v.mechanism)).collect();
        Some(pointed.iter().any(|t| alarms.iter().any(|v| locus_matches(v, t))))
    } else {
        None
    };
    Ok(DetectionRow {
        scenario: label,
        attack: spec.map(|s| s.id),
        expected,
        expect_detected: spec.map_or(false, AttackSpec::expect_detected),
        status: match out.status.detail() {
            d if d.is_empty() => out.status.as_str().to_string(),
            d => format!("{}: {d}", out.status.as_str()),
        },
        realtime,
        postponed,
        detected,
        locus_ok,
        truth_file,
    })
}

/// Scenarios run one after another, each with its own KMS and job actors.
pub fn run_matrix(base: &JobConfig, scenarios: &[AttackSpec], modes: Modes, dir: &Path) -> Result<DetectionMatrix, MatrixError> {
    let mut m = DetectionMatrix::default();
    for s in scenarios {
        m.rows.push(run_scenario(base, Some(s), modes, dir)?);
    }
    Ok(m)
}
