//! Wire-level message model shared by every other module.

mod codec;
mod envelope;
mod payload;

pub use codec::{
    content_bytes, content_hash, deserialize, serialize, sha256, CodecError, Digest, Reader, Writer, MAGIC,
};
pub use envelope::{
    Envelope, EnvelopeError, FlowLevel, Partition, PartyId, TransferKey, TransferMode, VarName,
};
pub use payload::{
    Command, ControlCommand, Payload, PayloadError, PayloadKind, TAG_BOOL_FLAG, TAG_CONTROL, TAG_EXECUTABLE_BLOB,
};

use serde_json::{json, Value};

/// JSON rendering for reports and `ledger export`. Payload bytes are hex; if
/// the envelope is a whole unary message its decoded kind is included.
pub fn debug_json(env: &Envelope) -> Value {
    let decoded = if env.partition.total == 1 {
        match Payload::decode(&env.payload) {
            Ok(p) => json!({ "kind": p.kind(), "len": p.len() }),
            Err(e) => json!({ "error": e.to_string() }),
        }
    } else {
        Value::Null
    };
    json!({
        "job_id": env.job_id,
        "task_id": env.task_id,
        "seq": env.seq,
        "flow": env.flow,
        "variable": env.variable,
        "src": env.src.to_string(),
        "dst": env.dst.to_string(),
        "transfer_mode": env.transfer_mode,
        "partition": [env.partition.index, env.partition.total],
        "credential": hex::encode(&env.credential),
        "payload_len": env.payload.len(),
        "payload": hex::encode(&env.payload),
        "decoded": decoded,
        "sent_at": env.sent_at,
        "recv_at": env.recv_at,
        "content_hash": hex::encode(content_hash(env)),
    })
}
