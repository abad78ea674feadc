use crate::gateway::LinkProfile;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionKind {
    Raw,
    Rsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainKind {
    HeteroLr,
    SecureboostLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "kind", rename_all = "snake_case")]
pub enum ComponentKind {
    Intersection(IntersectionKind),
    Train(TrainKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    /// Also the task id on every envelope of this component.
    pub name: String,
    pub kind: ComponentKind,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Named {
        name: String,
        #[serde(default)]
        seed: u64,
    },
    Explicit {
        rows: usize,
        guest_dim: usize,
        host_dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        guest_csv: PathBuf,
        host_csv: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobConfig {
    pub job_id: String,
    pub dag: Vec<Component>,
    #[serde(default = "default_max_iter")]
    pub max_iter: u32,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default, with = "eps_serde")]
    pub convergence_eps: f64,
    #[serde(default = "default_tree_depth")]
    pub tree_depth: u32,
    #[serde(default = "default_n_bins")]
    pub n_bins: u32,
    #[serde(default = "default_batch")]
    pub batch: String,
    /// 64 hex characters.
    pub master_seed: String,
    #[serde(default = "default_partitions")]
    pub partitions: u32,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub link: LinkProfile,
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u64,
    /// Derive key material from `master_seed` instead of OS entropy.
    #[serde(default = "default_true")]
    pub deterministic_keys: bool,
    #[serde(default = "default_timeout")]
    pub recv_timeout_s: f64,
}

fn default_max_iter() -> u32 {
    30
}
fn default_learning_rate() -> f64 {
    0.15
}
fn default_tree_depth() -> u32 {
    3
}
fn default_n_bins() -> u32 {
    8
}
fn default_batch() -> String {
    "full".into()
}
fn default_partitions() -> u32 {
    4
}
fn default_modulus_bits() -> u64 {
    crate::crypto::paillier::DEFAULT_MODULUS_BITS
}
fn default_true() -> bool {
    true
}
fn default_timeout() -> f64 {
    30.0
}

/// Accepts a number or the strings `"inf"` / `"infinity"`.
mod eps_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Eps {
            Num(f64),
            Str(String),
        }
        match Eps::deserialize(d)? {
            Eps::Num(x) => Ok(x),
            Eps::Str(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
            Eps::Str(s) => Err(serde::de::Error::custom(format!("bad convergence_eps {s:?}"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl JobConfig {
    /// Small two-component job used by tests and the CLI templates.
    pub fn example(job_id: &str, intersection: IntersectionKind, train: TrainKind) -> JobConfig {
        JobConfig {
            job_id: job_id.into(),
            dag: vec![
                Component { name: "intersect".into(), kind: ComponentKind::Intersection(intersection), depends_on: vec![] },
                Component { name: "train".into(), kind: ComponentKind::Train(train), depends_on: vec!["intersect".into()] },
            ],
            max_iter: 5,
            learning_rate: default_learning_rate(),
            convergence_eps: 0.0,
            tree_depth: 2,
            n_bins: default_n_bins(),
            batch: default_batch(),
            master_seed: "00".repeat(32),
            partitions: default_partitions(),
            dataset: DatasetSpec::Named { name: "small".into(), seed: 0 },
            link: LinkProfile::default(),
            modulus_bits: default_modulus_bits(),
            deterministic_keys: true,
            recv_timeout_s: default_timeout(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> JobConfig {
        let mut s = [0u8; 32];
        s[24..].copy_from_slice(&seed.to_be_bytes());
        self.master_seed = hex::encode(s);
        self
    }

    pub fn load(path: &Path) -> Result<JobConfig, ConfigError> {
        let cfg: JobConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        if let Ok(b) = hex::decode(&self.master_seed) {
            if b.len() == 32 {
                out.copy_from_slice(&b);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.job_id.is_empty() || self.job_id.contains(['/', '\\', '.']) {
            return bad(format!("job_id {:?} must be non-empty without '/', '\\' or '.'", self.job_id));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1".into());
        }
        if !(1..=3).contains(&self.tree_depth) {
            return bad("tree_depth must be in 1..=3".into());
        }
        if self.partitions < 1 {
            return bad("partitions must be at least 1".into());
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2".into());
        }
        if self.batch != "full" {
            return bad("only full-batch training is supported".into());
        }
        if hex::decode(&self.master_seed).map(|b| b.len()) != Ok(32) {
            return bad("master_seed must be 64 hex characters".into());
        }
        if self.convergence_eps.is_nan() || self.convergence_eps < 0.0 {
            return bad("convergence_eps must be non-negative".into());
        }
        if self.modulus_bits < 128 || self.modulus_bits % 2 != 0 {
            return bad("modulus_bits must be even and at least 128".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.dag {
            if c.name.is_empty() || c.name.contains('.') {
                return bad(format!("component name {:?} must be non-empty without '.'", c.name));
            }
            if !names.insert(c.name.as_str()) {
                return bad(format!("duplicate component {}", c.name));
            }
        }
        for c in &self.dag {
            for d in &c.depends_on {
                if !names.contains(d.as_str()) {
                    return bad(format!("{} depends on unknown component {d}", c.name));
                }
            }
        }
        self.topo_order().map(|_| ()).map_err(ConfigError::Invalid)
    }

    /// Components in dependency order, ties broken by declaration order.
    pub fn topo_order(&self) -> Result<Vec<Component>, String> {
        let mut done: BTreeSet<&str> = BTreeSet::new();
        let mut out = Vec::new();
        while out.len() < self.dag.len() {
            let next = self
                .dag
                .iter()
                .find(|c| !done.contains(c.name.as_str()) && c.depends_on.iter().all(|d| done.contains(d.as_str())));
            match next {
                Some(c) => {
                    done.insert(&c.name);
                    out.push(c.clone());
                }
                None => return Err("component DAG has a cycle".into()),
            }
        }
        Ok(out)
    }

    pub fn intersection(&self) -> Option<(&str, IntersectionKind)> {
        self.dag.iter().find_map(|c| match c.kind {
            ComponentKind::Intersection(k) => Some((c.name.as_str(), k)),
            _ => None,
        })
    }

    pub fn train(&self) -> Option<(&str, TrainKind)> {
        self.dag.iter().find_map(|c| match c.kind {
            ComponentKind::Train(k) => Some((c.name.as_str(), k)),
            _ => None,
        })
    }

    /// Named scalars for length and bound expressions.
    pub fn stats(&self, n_rows: usize, guest_dim: usize, host_dim: usize) -> BTreeMap<String, i64> {
        let mut m = BTreeMap::new();
        m.insert("n_rows".into(), n_rows as i64);
        m.insert("n_guest_features".into(), guest_dim as i64);
        m.insert("n_host_features".into(), host_dim as i64);
        m.insert("max_iter".into(), self.max_iter as i64);
        m.insert("tree_depth".into(), self.tree_depth as i64);
        m.insert("n_bins".into(), self.n_bins as i64);
        m.insert("partitions".into(), self.partitions as i64);
        m.insert("max_internal_nodes".into(), (1i64 << self.tree_depth) - 1);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_with_infinite_eps() {
        let mut c = JobConfig::example("j1", IntersectionKind::Rsa, TrainKind::HeteroLr);
        c.convergence_eps = f64::INFINITY;
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"inf\""));
        let back: JobConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let s = r#"{"job_id":"x","dag":[],"master_seed":"0000000000000000000000000000000000000000000000000000000000000000","dataset":{"rows":100,"guest_dim":2,"host_dim":3}}"#;
        let c: JobConfig = serde_json::from_str(s).unwrap();
        c.validate().unwrap();
        assert_eq!(c.partitions, 4);
        assert_eq!(c.n_bins, 8);
        assert_eq!(c.link, LinkProfile::default());
    }

    #[test]
    fn validation_errors() {
        let base = JobConfig::example("j", IntersectionKind::Raw, TrainKind::HeteroLr);
        let mut c = base.clone();
        c.max_iter = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.tree_depth = 4;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.dag[0].depends_on = vec!["train".into()];
        assert!(c.validate().unwrap_err().to_string().contains("cycle"));
        assert!(base.validate().is_ok());
    }
}
