use super::*;
use crate::analyzer::VerdictClass;
use crate::collector::{read_verified, Schema};
use crate::parties::{run_job, DatasetSpec, IntersectionKind, NoHooks, RunOptions};

fn tiny(job: &str) -> JobConfig {
    let mut c = JobConfig::example(job, IntersectionKind::Raw, TrainKind::HeteroLr);
    c.max_iter = 4;
    c.modulus_bits = 256;
    c.dataset = DatasetSpec::Explicit { rows: 80, guest_dim: 3, host_dim: 4, seed: 5 };
    c
}

#[test]
fn suite_round_trips_through_json() {
    let suite = AttackSpec::standard_suite();
    assert_eq!(suite.len(), 10);
    let s = serde_json::to_string(&suite).unwrap();
    let back: Vec<AttackSpec> = serde_json::from_str(&s).unwrap();
    assert_eq!(back, suite);
    let labels: Vec<String> = suite.iter().map(AttackSpec::label).collect();
    assert!(labels.contains(&"A06.pre_poisoned".to_string()));
    assert_eq!(suite.iter().filter(|s| !s.expect_detected()).count(), 1);
}

#[test]
fn incompatible_specs_are_config_errors() {
    let sb = JobConfig::example("x", IntersectionKind::Raw, TrainKind::SecureboostLite);
    let a04 = AttackSpec::new(Attack::A04, None, AttackLocus::Channel, 1);
    assert!(matches!(inject(&a04, &sb), Err(AttackError::Incompatible(..))));
    let lr = tiny("x");
    let late = AttackSpec::new(Attack::A04, None, AttackLocus::Channel, 9);
    assert!(inject(&late, &lr).is_err());
    let bare = AttackSpec::new(Attack::A05, None, AttackLocus::Party(PartyId::Host), 1);
    assert!(inject(&bare, &lr).is_err());
    let mut no_psi = lr.clone();
    no_psi.dag.retain(|c| c.name == "train");
    no_psi.dag[0].depends_on.clear();
    let a02 = AttackSpec::new(Attack::A02, None, AttackLocus::Channel, 0);
    assert!(inject(&a02, &no_psi).is_err());
    assert!(inject(&a02, &lr).is_ok());
}

fn body_hashes(cfg: &JobConfig, hooks: Arc<dyn Hooks>) -> Vec<[u8; 32]> {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { job_dir: dir.path().to_path_buf(), kms: Kms::shared(), hooks, schema: Schema::default(), monitor: None };
    let out = run_job(cfg, opts).unwrap();
    read_verified(&out.ledger_path).unwrap().iter().map(|r| r.body_hash()).collect()
}

#[test]
fn zero_sigma_is_a_null_attack() {
    let cfg = tiny("null");
    let spec = AttackSpec::new(Attack::A06, Some(Variant::InTraining), AttackLocus::Party(PartyId::Host), 1).magnitude(0.0);
    let inj = Arc::new(inject(&spec, &cfg).unwrap());
    let a = body_hashes(&cfg, inj.clone());
    let b = body_hashes(&cfg, Arc::new(NoHooks));
    assert_eq!(a, b);
    assert_eq!(inj.ground_truth().len(), 1);
}

#[test]
fn pre_poisoning_targets_the_label_column() {
    let (g, mut h) = crate::parties::load_dataset(&DatasetSpec::Explicit { rows: 200, guest_dim: 2, host_dim: 3, seed: 1 }).unwrap();
    let labels = g.labels.clone().unwrap();
    let by_id: HashMap<&str, u8> = g.ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    // Plant a column that copies the label.
    for (i, id) in h.ids.iter().enumerate() {
        h.features[i][2] = by_id.get(id.as_str()).map_or(0.0, |&y| y as f64 * 3.0);
    }
    assert_eq!(label_column(&g, &h), Some(2));
}

#[test]
fn tiny_matrix_matches_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny("mx");
    let m = run_matrix(&base, &AttackSpec::standard_suite(), Modes::BOTH, dir.path()).unwrap();
    println!("{}", m.to_table());
    for r in &m.rows {
        for v in r.alarms() {
            println!("  {} {:?} {:?} {:?} {}", r.scenario, v.class, v.mechanism, v.locus, v.message);
        }
    }
    assert!(m.all_as_expected(), "{}", m.to_table());

    let honest = run_scenario(&base, None, Modes::BOTH, dir.path()).unwrap();
    assert!(honest.as_expected());

    assert!(m.row("A01").unwrap().has_class(VerdictClass::Impersonation));
    assert!(m.row("A03").unwrap().has_class(VerdictClass::UndeclaredVariable));
    assert!(m.row("A08").unwrap().has_class(VerdictClass::AccessDenied));
    let a06 = m.row("A06.in_training").unwrap();
    let d = a06.postponed.alarms.iter().find(|v| v.class == VerdictClass::ReplayDivergence).unwrap();
    assert_eq!(d.locus.iteration, Some(2));
    assert_eq!(d.locus.variable.as_deref(), Some("train.masked_grad.2"));
    assert!(m.row("A06.pre_poisoned").unwrap().alarms().next().is_none());
    assert!(dir.path().join("truth").join("mx-a08.json").exists());
}
