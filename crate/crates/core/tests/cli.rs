use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use vflguard::collector::{verify_chain, ChainStatus};
use vflguard::parties::{DatasetSpec, IntersectionKind, JobConfig, TrainKind};

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Env {
        Env { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn config(&self, job: &str, train: TrainKind) -> PathBuf {
        let mut c = JobConfig::example(job, IntersectionKind::Raw, train);
        c.max_iter = 3;
        c.modulus_bits = 256;
        c.dataset = DatasetSpec::Explicit { rows: 60, guest_dim: 3, host_dim: 4, seed: 2 };
        let p = self.path(&format!("{job}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&c).unwrap()).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> (i32, String) {
        let out: Output = Command::new(env!("CARGO_BIN_EXE_vflguard"))
            .arg("--ledger-dir")
            .arg(self.path("jobs"))
            .arg("--report-dir")
            .arg(self.path("reports"))
            .args(args)
            .env("VFLGUARD_KMS_SECRET", "test-secret")
            .output()
            .unwrap();
        let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
        (out.status.code().unwrap_or(-1), text)
    }

    fn ledger(&self, job: &str) -> PathBuf {
        self.path("jobs").join(job).join("ledger.bin")
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn head(p: &Path) -> [u8; 32] {
    match verify_chain(p).unwrap() {
        ChainStatus::Ok { head, .. } => head,
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_config_is_exit_2() {
    let e = Env::new();
    assert_eq!(e.run(&["run", "/nonexistent/job.json"]).0, 2);
    assert_eq!(e.run(&["no-such-command"]).0, 2);
}

#[test]
fn honest_run_then_replay() {
    let e = Env::new();
    let cfg = e.config("cli-lr", TrainKind::HeteroLr);
    let (code, out) = e.run(&["run", s(&cfg), "--realtime"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("Conformant") && out.contains("realtime verification"), "{out}");
    let h1 = head(&e.ledger("cli-lr"));

    let (code, out) = e.run(&["run", s(&cfg), "--realtime"]);
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("--force"));
    let (code, _) = e.run(&["run", s(&cfg), "--realtime", "--force"]);
    assert_eq!(code, 0);
    assert_eq!(head(&e.ledger("cli-lr")), h1);

    let (code, out) = e.run(&["verify-post", "cli-lr"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("reduction rate"), "{out}");
    assert!(e.path("reports").join("cli-lr.replay.json").exists());
    assert!(e.path("reports").join("cli-lr.run.json").exists());

    let (code, out) = e.run(&["ledger", "verify", s(&e.ledger("cli-lr"))]);
    assert_eq!(code, 0, "{out}");
    let export = e.path("export.json");
    assert_eq!(e.run(&["ledger", "export", s(&e.ledger("cli-lr")), "--out", s(&export)]).0, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&export).unwrap()).unwrap();
    let tags: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["tag"].as_str().unwrap()).collect();
    assert!(tags.contains(&"job_metadata") && tags.last() == Some(&"verdict"), "{tags:?}");

    let (code, out) = e.run(&["kms", "list", "cli-lr"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("cli-lr.paillier"), "{out}");
    assert!(!out.contains("material"));

    // Flip one byte in the middle of the ledger.
    let lp = e.ledger("cli-lr");
    let mut bytes = std::fs::read(&lp).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&lp, bytes).unwrap();
    let (code, out) = e.run(&["verify-post", "cli-lr"]);
    assert_eq!(code, 4, "{out}");
    assert!(out.contains("broken at record"), "{out}");
    assert_eq!(e.run(&["ledger", "verify", s(&lp)]).0, 4);
}

#[test]
fn attacked_runs_raise_alarms() {
    let e = Env::new();
    let cfg = e.config("cli-a02", TrainKind::HeteroLr);
    let (code, out) = e.run(&["run", s(&cfg), "--realtime", "--attack", "A02"]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("control-flow FSM"), "{out}");

    let cfg = e.config("cli-a06", TrainKind::HeteroLr);
    let (code, out) = e.run(&["run", s(&cfg), "--attack", "A06.in_training"]);
    assert_eq!(code, 0, "{out}");
    let (code, out) = e.run(&["verify-post", "cli-a06"]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("divergence: train.masked_grad.2 from host"), "{out}");

    assert_eq!(e.run(&["run", s(&cfg), "--force", "--attack", "A99"]).0, 2);
}

#[test]
fn fsm_export_and_bench_usage() {
    let e = Env::new();
    let cfg = e.config("cli-fsm", TrainKind::SecureboostLite);
    let out = e.path("fsm");
    assert_eq!(e.run(&["fsm", "export", s(&cfg), "--out", s(&out)]).0, 0);
    for f in ["control.json", "intersect.json", "train.json", "rules.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let spec = e.path("empty.json");
    std::fs::write(&spec, r#"{"algorithms": [], "sizes": []}"#).unwrap();
    assert_eq!(e.run(&["bench", s(&spec)]).0, 2);
}

#[test]
fn bench_two_algorithms_small() {
    let e = Env::new();
    let spec = e.path("bench.json");
    std::fs::write(
        &spec,
        r#"{"algorithms": ["hetero_lr", "secureboost_lite"], "sizes": ["small"], "max_iter": 2, "modulus_bits": 256}"#,
    )
    .unwrap();
    let (code, out) = e.run(&["bench", s(&spec)]);
    assert_eq!(code, 0, "{out}");
    let table = std::fs::read_to_string(e.path("reports").join("latency.txt")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(e.path("reports").join("bench.json")).unwrap()).unwrap();
    for row in v["latency"].as_array().unwrap() {
        let verify = row["control_ms"].as_f64().unwrap() + row["algorithm_ms"].as_f64().unwrap();
        assert!(verify < row["job_s"].as_f64().unwrap() * 1e3 * 0.05, "{row}");
    }
}
