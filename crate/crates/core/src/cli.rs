//! Command-line front end. `run` returns the process exit code.

use crate::analyzer::overhead::{rhg_sweep, strictly_increasing, SweepPoint};
use crate::analyzer::plot::{plot_report, Series};
use crate::analyzer::verifier::{parse_verdicts, summary_stats};
use crate::analyzer::{fsmgen, monitor, replay, Mechanism, Verdict, VerifierSpec};
use crate::attacks::{inject, load_scenarios, run_matrix, run_scenario, AttackSpec, DetectionMatrix, Modes};
use crate::collector::{read_verified, verify_chain, ChainStatus, LedgerBody};
use crate::gateway::LinkProfile;
use crate::kms::{load_store, save_store, Kms, MASTER_SECRET_ENV};
use crate::parties::job::ledger_path;
use crate::parties::{run_job, DatasetSpec, Hooks, IntersectionKind, JobConfig, JobStatus, NoHooks, RunOptions, TrainKind};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ALARM: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_TAMPER: i32 = 4;

pub const KMS_STORE: &str = "kms.store";
const DEV_SECRET: &str = "vflguard-dev-secret";

#[derive(Debug, Parser)]
#[command(name = "vflguard", version, about = "Run, verify and replay two-party VFL jobs")]
pub struct Cli {
    /// Print every verdict, not only alarms.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// Parent of the per-job ledger directories.
    #[arg(long, global = true, default_value = "jobs")]
    pub ledger_dir: PathBuf,
    #[arg(long, global = true, default_value = "reports")]
    pub report_dir: PathBuf,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Execute a job through the gateway with collection on.
    Run {
        config: PathBuf,
        /// Attack scenario: a label from the standard suite (A02, A06.in_training, ...) or a JSON file.
        #[arg(long)]
        attack: Option<String>,
        #[arg(long)]
        realtime: bool,
        /// Verifier decrypts payloads with the superuser key.
        #[arg(long)]
        deep_check: bool,
        /// Replace an existing ledger for this job id.
        #[arg(long)]
        force: bool,
    },
    /// Replay a recorded job and compare message hashes.
    VerifyPost { job_id: String },
    /// Latency table and trend charts from a sweep spec.
    Bench { spec: PathBuf },
    #[command(subcommand)]
    Ledger(LedgerCmd),
    #[command(subcommand)]
    Kms(KmsCmd),
    #[command(subcommand)]
    Fsm(FsmCmd),
    /// Run attack scenarios in both modes and print the detection matrix.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerCmd {
    Verify { path: PathBuf },
    Export {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KmsCmd {
    List { job_id: String },
    Show { job_id: String, key_id: String },
    Revoke { job_id: String, key_id: String },
}

#[derive(Debug, Subcommand)]
pub enum FsmCmd {
    /// Write the control FSM, algorithm FSMs and rule table of a job.
    Export {
        config: PathBuf,
        #[arg(long, default_value = "fsm")]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Abort(String),
    #[error("ledger chain broken at record {index}: {reason}")]
    Tamper { index: u64, reason: String },
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Abort(_) => EXIT_ABORT,
            CliError::Tamper { .. } => EXIT_TAMPER,
        }
    }
}

fn config<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{ctx}: {e}"))
}

fn abort<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Abort(format!("{ctx}: {e}"))
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    match &cli.cmd {
        Cmd::Run { config, attack, realtime, deep_check, force } => {
            cmd_run(cli, config, attack.as_deref(), *realtime, *deep_check, *force)
        }
        Cmd::VerifyPost { job_id } => cmd_verify_post(cli, job_id),
        Cmd::Bench { spec } => cmd_bench(cli, spec),
        Cmd::Ledger(LedgerCmd::Verify { path }) => cmd_ledger_verify(path),
        Cmd::Ledger(LedgerCmd::Export { path, out }) => cmd_ledger_export(path, out.as_deref()),
        Cmd::Kms(k) => cmd_kms(cli, k),
        Cmd::Fsm(FsmCmd::Export { config, out }) => cmd_fsm_export(config, out),
        Cmd::Matrix { config, scenarios } => cmd_matrix(cli, config.as_deref(), scenarios.as_deref()),
    }
}

fn master_secret() -> Vec<u8> {
    match std::env::var(MASTER_SECRET_ENV) {
        Ok(s) if !s.is_empty() => s.into_bytes(),
        _ => {
            eprintln!("warning: {MASTER_SECRET_ENV} not set, using the built-in development secret");
            DEV_SECRET.as_bytes().to_vec()
        }
    }
}

fn open_kms(job_dir: &Path) -> Result<Arc<Kms>, CliError> {
    let kms = Kms::shared();
    let path = job_dir.join(KMS_STORE);
    load_store(&kms, &path, &master_secret()).map_err(config(&format!("key store {}", path.display())))?;
    Ok(kms)
}

fn write_report(dir: &Path, name: &str, v: &Value) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(config("report dir"))?;
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).expect("json")).map_err(config("report"))?;
    Ok(p)
}

fn mechanism_name(v: &Verdict) -> &'static str {
    match v.mechanism {
        Mechanism::Fsm => {
            let control = v.locus.task.as_deref() == Some("control")
                || v.locus.event.as_deref().is_some_and(|e| e.starts_with("control"));
            if control {
                "control-flow FSM"
            } else {
                "algorithm-flow FSM"
            }
        }
        Mechanism::Rules => "data rule table",
        Mechanism::Replay => "replay",
        Mechanism::Kms => "KMS",
        Mechanism::Collector => "collector",
    }
}

fn describe(v: &Verdict) -> String {
    let mut s = format!("{:?} {:?} [{}]", v.severity, v.class, mechanism_name(v));
    if let Some(a) = v.attack {
        let _ = write!(s, " {a}");
    }
    let l = &v.locus;
    let at: Vec<String> = [
        l.task.clone(),
        l.iteration.map(|i| format!("iter {i}")),
        l.variable.clone(),
        l.ledger_index.map(|i| format!("record {i}")),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !at.is_empty() {
        let _ = write!(s, " at {}", at.join(" / "));
    }
    let _ = write!(s, ": {}", v.message);
    s
}

fn print_verdicts(verdicts: &[Verdict], verbose: bool) -> usize {
    let alarms = verdicts.iter().filter(|v| v.is_alarm()).count();
    for v in verdicts.iter().filter(|v| verbose || v.is_alarm()) {
        println!("  {}", describe(v));
    }
    alarms
}

fn scenario(label: &str) -> Result<AttackSpec, CliError> {
    let p = Path::new(label);
    if p.exists() {
        let text = std::fs::read_to_string(p).map_err(config("attack file"))?;
        if let Ok(one) = serde_json::from_str::<AttackSpec>(&text) {
            return Ok(one);
        }
        let mut many = load_scenarios(p).map_err(config("attack file"))?;
        if many.len() != 1 {
            return Err(CliError::Config(format!("attack file holds {} scenarios, expected one", many.len())));
        }
        return Ok(many.remove(0));
    }
    AttackSpec::standard_suite()
        .into_iter()
        .find(|s| s.label().eq_ignore_ascii_case(label))
        .ok_or_else(|| CliError::Config(format!("unknown attack {label}")))
}

fn cmd_run(cli: &Cli, path: &Path, attack: Option<&str>, realtime: bool, deep: bool, force: bool) -> Result<i32, CliError> {
    let cfg = JobConfig::load(path).map_err(config(&path.display().to_string()))?;
    let job_dir = cli.ledger_dir.join(&cfg.job_id);
    if ledger_path(&job_dir).exists() {
        if !force {
            return Err(CliError::Config(format!("ledger for {} exists under {}; use --force to replace it", cfg.job_id, job_dir.display())));
        }
        std::fs::remove_dir_all(&job_dir).map_err(config("remove old ledger"))?;
    }
    let hooks: Arc<dyn Hooks> = match attack {
        Some(a) => {
            let spec = scenario(a)?;
            Arc::new(inject(&spec, &cfg).map_err(config("attack"))?)
        }
        None => Arc::new(NoHooks),
    };
    let kms = Kms::shared();
    let mut vspec = VerifierSpec::for_job(&cfg).map_err(config("verifier setup"))?;
    vspec.deep_check = deep;
    let schema = vspec.schema.clone();
    let mon = realtime.then(|| monitor(vspec, kms.clone()));
    let opts = RunOptions { job_dir: job_dir.clone(), kms: kms.clone(), hooks, schema, monitor: mon };
    let out = run_job(&cfg, opts).map_err(abort("job"))?;
    save_store(&kms, &job_dir.join(KMS_STORE), &master_secret()).map_err(abort("key store"))?;

    let t_job = out.t_job_ns as f64 / 1e9;
    println!("job {}: {} in {t_job:.3} s (virtual)", out.job_id, out.status.as_str());
    if let JobStatus::Aborted(why) = &out.status {
        println!("  aborted: {why}");
    }
    let verdicts = parse_verdicts(&out.verdicts);
    let mut alarms = 0;
    let mut stats = Value::Null;
    if realtime {
        if let Some(s) = summary_stats(&verdicts) {
            let ms = |ns: u64| ns as f64 / 1e6;
            println!(
                "realtime verification: {:.3} ms (control {:.3} ms, algorithm {:.3} ms), {:.3}% of job time",
                ms(s.total_ns()),
                ms(s.control_ns),
                ms(s.algorithm_ns),
                100.0 * s.total_ns() as f64 / out.t_job_ns.max(1) as f64
            );
            stats = serde_json::to_value(&s).expect("json");
        }
        alarms = print_verdicts(&verdicts, cli.verbose);
        println!("{}", if alarms == 0 { "Conformant".to_string() } else { format!("{alarms} alarm(s)") });
    }
    let report = json!({
        "job_id": out.job_id,
        "status": out.status.as_str(),
        "detail": out.status.detail(),
        "t_job_ns": out.t_job_ns,
        "model_hash": out.model_hash,
        "ledger": out.ledger_path,
        "alarms": alarms,
        "verification": stats,
        "verdicts": out.verdicts,
    });
    write_report(&cli.report_dir, &format!("{}.run.json", out.job_id), &report)?;
    Ok(if alarms > 0 {
        EXIT_ALARM
    } else if matches!(out.status, JobStatus::Aborted(_)) {
        EXIT_ABORT
    } else {
        EXIT_OK
    })
}

fn check_chain(path: &Path) -> Result<u64, CliError> {
    match verify_chain(path).map_err(config(&path.display().to_string()))? {
        ChainStatus::Ok { records, .. } => Ok(records),
        ChainStatus::Broken { first_bad_index, reason } => Err(CliError::Tamper { index: first_bad_index, reason }),
    }
}

fn cmd_verify_post(cli: &Cli, job_id: &str) -> Result<i32, CliError> {
    let job_dir = cli.ledger_dir.join(job_id);
    let lpath = ledger_path(&job_dir);
    check_chain(&lpath)?;
    let kms = open_kms(&job_dir)?;
    let out = replay(&lpath, &job_dir, &kms).map_err(abort("replay"))?;
    println!("replay of {job_id}: {}/{} message hashes match", out.matched, out.compared);
    if let Some(r) = &out.report {
        println!(
            "T_job {:.3} s, T_rep {:.3} s ({:.1}% of T_job), reduction rate {:.3}",
            r.t_job_ns as f64 / 1e9,
            r.t_rep_ns as f64 / 1e9,
            100.0 * r.bound_ratio(),
            r.reduction_rate
        );
        println!("communication saved {:.1} ms, waiting saved {:.1} ms", r.comm_saved_ns as f64 / 1e6, r.wait_saved_ns as f64 / 1e6);
    }
    if let Some(d) = &out.divergence {
        println!(
            "divergence: {} from {} (task {}, iteration {}, record {})",
            d.variable,
            d.src,
            d.task,
            d.iteration.map_or("-".into(), |i| i.to_string()),
            d.ledger_index.map_or("-".into(), |i| i.to_string())
        );
    }
    let alarms = print_verdicts(&out.verdicts, cli.verbose);
    println!("{}", if out.conformant() { "Conformant".to_string() } else { format!("{alarms} alarm(s)") });
    let report = json!({
        "job_id": job_id,
        "conformant": out.conformant(),
        "compared": out.compared,
        "matched": out.matched,
        "model_matches": out.model_matches,
        "overhead": out.report,
        "divergence": out.divergence,
        "verdicts": out.verdicts,
    });
    write_report(&cli.report_dir, &format!("{job_id}.replay.json"), &report)?;
    Ok(if out.conformant() { EXIT_OK } else { EXIT_ALARM })
}

/// Sweep description for `bench`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub algorithms: Vec<TrainKind>,
    #[serde(default = "default_intersection")]
    pub intersection: IntersectionKind,
    pub sizes: Vec<String>,
    #[serde(default)]
    pub rhg: Vec<usize>,
    #[serde(default = "default_rhg_size")]
    pub rhg_size: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub links: Vec<LinkProfile>,
    #[serde(default)]
    pub max_iter: Option<u32>,
    #[serde(default)]
    pub modulus_bits: Option<u64>,
}

fn default_intersection() -> IntersectionKind {
    IntersectionKind::Raw
}

fn default_rhg_size() -> String {
    "medium".into()
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyRow {
    pub algorithm: TrainKind,
    pub size: String,
    pub link: LinkProfile,
    pub control_ms: f64,
    pub algorithm_ms: f64,
    pub job_s: f64,
    pub comm_saved_ms: f64,
    pub alarms: usize,
}

impl LatencyRow {
    pub fn ratio(&self) -> f64 {
        (self.control_ms + self.algorithm_ms) / (self.job_s * 1e3)
    }
}

fn bench_base(spec: &BenchSpec, alg: TrainKind) -> JobConfig {
    let mut c = JobConfig::example("bench", spec.intersection, alg);
    if let Some(m) = spec.max_iter {
        c.max_iter = m;
    }
    if let Some(b) = spec.modulus_bits {
        c.modulus_bits = b;
    }
    c
}

fn bench_one(cfg: &JobConfig, dir: &Path) -> Result<(f64, f64, f64, f64, usize), CliError> {
    let kms = Kms::shared();
    let vspec = VerifierSpec::for_job(cfg).map_err(config("verifier setup"))?;
    let schema = vspec.schema.clone();
    let jd = dir.join(&cfg.job_id);
    let _ = std::fs::remove_dir_all(&jd);
    let opts = RunOptions { job_dir: jd.clone(), kms: kms.clone(), hooks: Arc::new(NoHooks), schema, monitor: Some(monitor(vspec, kms.clone())) };
    let out = run_job(cfg, opts).map_err(abort("job"))?;
    let verdicts = parse_verdicts(&out.verdicts);
    let s = summary_stats(&verdicts).unwrap_or_default();
    let rep = replay(&out.ledger_path, &jd, &kms).map_err(abort("replay"))?;
    let comm = rep.report.map_or(0.0, |r| r.comm_saved_ns as f64 / 1e6);
    let alarms = verdicts.iter().chain(&rep.verdicts).filter(|v| v.is_alarm()).count();
    let _ = std::fs::remove_dir_all(&jd);
    Ok((s.control_ns as f64 / 1e6, s.algorithm_ns as f64 / 1e6, out.t_job_ns as f64 / 1e9, comm, alarms))
}

fn alg_name(a: TrainKind) -> &'static str {
    match a {
        TrainKind::HeteroLr => "hetero_lr",
        TrainKind::SecureboostLite => "secureboost_lite",
    }
}

fn cmd_bench(cli: &Cli, path: &Path) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(path).map_err(config(&path.display().to_string()))?;
    let mut spec: BenchSpec = serde_json::from_str(&text).map_err(config("bench spec"))?;
    if spec.algorithms.is_empty() || spec.sizes.is_empty() || spec.seeds.is_empty() {
        return Err(CliError::Config("empty sweep: bench needs at least one algorithm, size and seed".into()));
    }
    if spec.links.is_empty() {
        spec.links.push(LinkProfile::default());
    }
    let work = cli.report_dir.join("bench-jobs");
    let mut rows = Vec::new();
    for &alg in &spec.algorithms {
        for size in &spec.sizes {
            for link in &spec.links {
                let mut acc = (0.0, 0.0, 0.0, 0.0, 0usize);
                for &seed in &spec.seeds {
                    let mut cfg = bench_base(&spec, alg).with_seed(seed);
                    cfg.job_id = format!("bench-{}-{size}-{seed}", alg_name(alg));
                    cfg.dataset = DatasetSpec::Named { name: size.clone(), seed };
                    cfg.link = *link;
                    let r = bench_one(&cfg, &work)?;
                    acc = (acc.0 + r.0, acc.1 + r.1, acc.2 + r.2, acc.3 + r.3, acc.4 + r.4);
                }
                let n = spec.seeds.len() as f64;
                rows.push(LatencyRow {
                    algorithm: alg,
                    size: size.clone(),
                    link: *link,
                    control_ms: acc.0 / n,
                    algorithm_ms: acc.1 / n,
                    job_s: acc.2 / n,
                    comm_saved_ms: acc.3 / n,
                    alarms: acc.4,
                });
            }
        }
    }
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<18} {:<8} {:>9} {:>12} {:>14} {:>10} {:>8}",
        "algorithm", "size", "link ms", "control ms", "algorithm ms", "job s", "ratio %"
    );
    for r in &rows {
        let _ = writeln!(
            table,
            "{:<18} {:<8} {:>9.1} {:>12.3} {:>14.3} {:>10.3} {:>8.3}",
            alg_name(r.algorithm),
            r.size,
            r.link.latency_ms,
            r.control_ms,
            r.algorithm_ms,
            r.job_s,
            100.0 * r.ratio()
        );
    }
    print!("{table}");

    let mut series = Vec::new();
    let mut trends = serde_json::Map::new();
    if spec.sizes.len() >= 2 {
        for &alg in &spec.algorithms {
            let link = spec.links[0];
            let pts: Vec<(String, f64, f64)> = rows
                .iter()
                .filter(|r| r.algorithm == alg && r.link == link)
                .map(|r| (r.size.clone(), crate::parties::dataset::named_dims(&r.size).map_or(0.0, |d| d.0 as f64), r.comm_saved_ms))
                .collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
            println!("{} communication time saved strictly increasing: {}", alg_name(alg), strictly_increasing(&ys));
            trends.insert(format!("{}_comm_saved_increasing", alg_name(alg)), json!(strictly_increasing(&ys)));
            series.push(Series {
                name: format!("Communication time saved {}", alg_name(alg)),
                x_label: "dataset".into(),
                y_label: "ms".into(),
                points: pts,
            });
        }
    }
    let mut rhg_points: Vec<SweepPoint> = Vec::new();
    if !spec.rhg.is_empty() {
        for &alg in &spec.algorithms {
            let mut base = bench_base(&spec, alg);
            base.job_id = format!("bench-{}", alg_name(alg));
            base.link = spec.links[0];
            let pts = rhg_sweep(&base, &spec.rhg_size, &spec.rhg, &spec.seeds, &work).map_err(abort("rhg sweep"))?;
            let ys: Vec<f64> = pts.iter().map(SweepPoint::calc_reduction_rate).collect();
            println!("{} calculation reduction rate strictly increasing: {}", alg_name(alg), strictly_increasing(&ys));
            trends.insert(format!("{}_calc_reduction_increasing", alg_name(alg)), json!(strictly_increasing(&ys)));
            series.push(Series {
                name: format!("Calculation reduction rate {}", alg_name(alg)),
                x_label: "R_hg".into(),
                y_label: "rate".into(),
                points: pts.iter().map(|p| (p.label.clone(), p.x, p.calc_reduction_rate())).collect(),
            });
            rhg_points.extend(pts);
        }
    }
    if !series.is_empty() {
        let out = plot_report(&series, &cli.report_dir).map_err(abort("plot"))?;
        for w in &out.warnings {
            eprintln!("warning: {w}");
        }
        for p in &out.svgs {
            println!("chart {}", p.display());
        }
    }
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&cli.report_dir).map_err(config("report dir"))?;
    std::fs::write(cli.report_dir.join("latency.txt"), &table).map_err(config("report"))?;
    write_report(&cli.report_dir, "bench.json", &json!({ "latency": rows, "rhg": rhg_points, "trends": trends }))?;
    let alarms: usize = rows.iter().map(|r| r.alarms).sum();
    Ok(if alarms > 0 { EXIT_ALARM } else { EXIT_OK })
}

fn cmd_ledger_verify(path: &Path) -> Result<i32, CliError> {
    let n = check_chain(path)?;
    println!("ledger ok: {n} records");
    Ok(EXIT_OK)
}

fn cmd_ledger_export(path: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    check_chain(path)?;
    let records = read_verified(path).map_err(config("ledger"))?;
    let rows: Vec<Value> = records
        .iter()
        .map(|r| {
            let body = match &r.body {
                LedgerBody::Envelope(_) => match r.body.as_envelope() {
                    Some(Ok(env)) => crate::messages::debug_json(&env),
                    _ => json!("undecodable envelope"),
                },
                other => other.json().cloned().unwrap_or(Value::Null),
            };
            json!({
                "index": r.index,
                "tag": r.body.tag().name(),
                "record_hash": hex::encode(r.record_hash),
                "body": body,
                "annotation": r.annotation,
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).expect("json");
    match out {
        Some(p) => std::fs::write(p, text).map_err(config("export"))?,
        None => println!("{text}"),
    }
    Ok(EXIT_OK)
}

fn cmd_kms(cli: &Cli, k: &KmsCmd) -> Result<i32, CliError> {
    let (job_id, key) = match k {
        KmsCmd::List { job_id } => (job_id, None),
        KmsCmd::Show { job_id, key_id } | KmsCmd::Revoke { job_id, key_id } => (job_id, Some(key_id)),
    };
    let job_dir = cli.ledger_dir.join(job_id);
    let kms = open_kms(&job_dir)?;
    let public = |id: &str| -> Result<Value, CliError> {
        let r = kms.record_of(id).ok_or_else(|| CliError::Config(format!("no key {id}")))?;
        Ok(json!({
            "key_id": r.key_id,
            "kind": r.kind,
            "owner": r.owner,
            "state": r.state,
            "acl": r.acl,
            "created_at": r.created_at,
            "expires_at": r.expires_at,
        }))
    };
    match (k, key) {
        (KmsCmd::List { .. }, _) => {
            for id in kms.key_ids() {
                let v = public(&id)?;
                println!("{id} {} {} {}", v["kind"], v["owner"], v["state"]);
            }
        }
        (KmsCmd::Show { .. }, Some(id)) => println!("{}", serde_json::to_string_pretty(&public(id)?).expect("json")),
        (KmsCmd::Revoke { .. }, Some(id)) => {
            kms.revoke(id).map_err(config("revoke"))?;
            save_store(&kms, &job_dir.join(KMS_STORE), &master_secret()).map_err(abort("key store"))?;
            println!("revoked {id}");
        }
        _ => unreachable!(),
    }
    Ok(EXIT_OK)
}

fn cmd_fsm_export(path: &Path, out: &Path) -> Result<i32, CliError> {
    let cfg = JobConfig::load(path).map_err(config(&path.display().to_string()))?;
    let spec = VerifierSpec::for_job(&cfg).map_err(config("verifier setup"))?;
    std::fs::create_dir_all(out).map_err(config("output dir"))?;
    let w = |name: String, text: String| std::fs::write(out.join(&name), text).map_err(config("write"));
    w("control.json".into(), spec.control.to_json())?;
    for (task, f) in fsmgen::algorithm_fsms(&cfg) {
        w(format!("{task}.json"), f.to_json())?;
    }
    w("rules.json".into(), spec.rules.to_json())?;
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_matrix(cli: &Cli, cfg_path: Option<&Path>, scenarios: Option<&Path>) -> Result<i32, CliError> {
    let base = match cfg_path {
        Some(p) => JobConfig::load(p).map_err(config(&p.display().to_string()))?,
        None => JobConfig::example("matrix", IntersectionKind::Raw, TrainKind::HeteroLr),
    };
    let suite = match scenarios {
        Some(p) => load_scenarios(p).map_err(config("scenario file"))?,
        None => AttackSpec::standard_suite(),
    };
    let work = cli.ledger_dir.join("matrix");
    let honest = run_scenario(&base, None, Modes::BOTH, &work).map_err(abort("honest run"))?;
    let attacked = run_matrix(&base, &suite, Modes::BOTH, &work).map_err(abort("matrix"))?;
    let mut m = DetectionMatrix { rows: vec![honest] };
    m.rows.extend(attacked.rows);
    print!("{}", m.to_table());
    if cli.verbose {
        for r in &m.rows {
            for v in r.alarms() {
                println!("  {} {}", r.scenario, describe(v));
            }
        }
    }
    write_report(&cli.report_dir, "matrix.json", &serde_json::to_value(&m).expect("json"))?;
    std::fs::write(cli.report_dir.join("matrix.txt"), m.to_table()).map_err(config("report"))?;
    Ok(if m.all_as_expected() { EXIT_OK } else { EXIT_ALARM })
}
