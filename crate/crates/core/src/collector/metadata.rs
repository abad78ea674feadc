use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

/// Stored copy of one party's training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRef {
    pub party: String,
    /// Relative to the job directory.
    pub path: String,
    pub content_hash: String,
}

/// First record of every job ledger. Everything replay needs besides the
/// secret keys, which it fetches from the KMS as superuser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMetadata {
    pub job_id: String,
    pub config: Value,
    pub config_hash: String,
    pub data: Vec<DataRef>,
    pub code_hash: String,
    pub key_ids: BTreeMap<String, String>,
    pub master_seed: String,
    pub initial_model: Value,
    /// Named scalars for length and bound expressions, before alignment.
    #[serde(default)]
    pub stats: BTreeMap<String, i64>,
}

/// Deterministic job summary. Timing goes in the record annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEnd {
    pub status: String,
    pub detail: String,
    pub model_hash: String,
    pub envelopes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartyTiming {
    pub party: String,
    /// Virtual clock at exit.
    pub clock_ns: u64,
    pub cpu_ns: u64,
    /// Blocked in receive while the peer was still computing.
    pub wait_ns: u64,
    /// Blocked in receive while the message was on the link.
    pub comm_ns: u64,
}
