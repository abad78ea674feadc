//! Typed message bodies and their whitelisting decoder.
//!
//! Every body starts with a one-byte tag. The decoder accepts exactly the tags
//! listed in [`PayloadKind`]; anything else is reported as
//! [`PayloadError::Forbidden`] and never interpreted further.

use super::codec::{CodecError, Reader, Writer};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const TAG_CIPHERTEXT_VECTOR: u8 = 0x01;
pub const TAG_PLAIN_FLOAT_VECTOR: u8 = 0x02;
pub const TAG_PLAIN_SCALAR: u8 = 0x03;
pub const TAG_BOOL_FLAG: u8 = 0x04;
pub const TAG_ID_HASH_LIST: u8 = 0x05;
pub const TAG_CONTROL: u8 = 0x06;
/// Tag used by serialized-object bodies on platforms that ship pickled
/// objects between parties. Never accepted.
pub const TAG_EXECUTABLE_BLOB: u8 = 0xE7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PayloadKind {
    CiphertextVector,
    PlainFloatVector,
    PlainScalar,
    BoolFlag,
    IdHashList,
    Control,
    OpaqueForbidden,
}

impl PayloadKind {
    pub fn from_tag(tag: u8) -> PayloadKind {
        match tag {
            TAG_CIPHERTEXT_VECTOR => PayloadKind::CiphertextVector,
            TAG_PLAIN_FLOAT_VECTOR => PayloadKind::PlainFloatVector,
            TAG_PLAIN_SCALAR => PayloadKind::PlainScalar,
            TAG_BOOL_FLAG => PayloadKind::BoolFlag,
            TAG_ID_HASH_LIST => PayloadKind::IdHashList,
            TAG_CONTROL => PayloadKind::Control,
            _ => PayloadKind::OpaqueForbidden,
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    SubmitJob,
    Start,
    Progress,
    Complete,
    Stop,
    JobComplete,
    Abort,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::SubmitJob,
        Command::Start,
        Command::Progress,
        Command::Complete,
        Command::Stop,
        Command::JobComplete,
        Command::Abort,
    ];

    /// Variable name used for this command on the wire.
    pub fn variable(self) -> &'static str {
        match self {
            Command::SubmitJob => "submit_job",
            Command::Start => "start",
            Command::Progress => "progress",
            Command::Complete => "complete",
            Command::Stop => "stop",
            Command::JobComplete => "job_complete",
            Command::Abort => "abort",
        }
    }

    pub fn from_variable(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.variable() == s)
    }

    fn tag(self) -> u8 {
        Command::ALL.iter().position(|c| *c == self).unwrap() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub command: Command,
    pub component: String,
    pub iteration: u32,
    pub detail: String,
}

impl ControlCommand {
    pub fn new(command: Command, component: &str) -> Self {
        ControlCommand { command, component: component.to_string(), iteration: 0, detail: String::new() }
    }

    pub fn at(mut self, iteration: u32) -> Self {
        self.iteration = iteration;
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    CiphertextVector { key_id: String, values: Vec<BigUint> },
    PlainFloatVector(Vec<f64>),
    PlainScalar(f64),
    /// Raw byte so that out-of-domain flags survive decoding and can be
    /// reported by the rule checker.
    BoolFlag(u8),
    IdHashList(Vec<Vec<u8>>),
    Control(ControlCommand),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("empty payload")]
    Empty,
    #[error("tag {tag:#04x} is not on the deserialization whitelist")]
    Forbidden { tag: u8 },
    #[error("malformed {kind} body: {source}")]
    Malformed { kind: PayloadKind, source: CodecError },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::CiphertextVector { .. } => PayloadKind::CiphertextVector,
            Payload::PlainFloatVector(_) => PayloadKind::PlainFloatVector,
            Payload::PlainScalar(_) => PayloadKind::PlainScalar,
            Payload::BoolFlag(_) => PayloadKind::BoolFlag,
            Payload::IdHashList(_) => PayloadKind::IdHashList,
            Payload::Control(_) => PayloadKind::Control,
        }
    }

    pub fn flag(value: bool) -> Payload {
        Payload::BoolFlag(value as u8)
    }

    /// Element count as seen by length rules.
    pub fn len(&self) -> usize {
        match self {
            Payload::CiphertextVector { values, .. } => values.len(),
            Payload::PlainFloatVector(v) => v.len(),
            Payload::IdHashList(v) => v.len(),
            Payload::PlainScalar(_) | Payload::BoolFlag(_) | Payload::Control(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Payload::CiphertextVector { key_id, values } => {
                w.u8(TAG_CIPHERTEXT_VECTOR).str(key_id).u32(values.len() as u32);
                for v in values {
                    w.bytes(&v.to_bytes_be());
                }
            }
            Payload::PlainFloatVector(values) => {
                w.u8(TAG_PLAIN_FLOAT_VECTOR).u32(values.len() as u32);
                for v in values {
                    w.f64(*v);
                }
            }
            Payload::PlainScalar(v) => {
                w.u8(TAG_PLAIN_SCALAR).f64(*v);
            }
            Payload::BoolFlag(v) => {
                w.u8(TAG_BOOL_FLAG).u8(*v);
            }
            Payload::IdHashList(items) => {
                w.u8(TAG_ID_HASH_LIST).u32(items.len() as u32);
                for item in items {
                    w.bytes(item);
                }
            }
            Payload::Control(c) => {
                w.u8(TAG_CONTROL).u8(c.command.tag()).str(&c.component).u32(c.iteration).str(&c.detail);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Payload, PayloadError> {
        let tag = *bytes.first().ok_or(PayloadError::Empty)?;
        let kind = PayloadKind::from_tag(tag);
        if kind == PayloadKind::OpaqueForbidden {
            return Err(PayloadError::Forbidden { tag });
        }
        decode_body(kind, &bytes[1..]).map_err(|source| PayloadError::Malformed { kind, source })
    }
}

fn decode_body(kind: PayloadKind, body: &[u8]) -> Result<Payload, CodecError> {
    let mut r = Reader::new(body);
    let payload = match kind {
        PayloadKind::CiphertextVector => {
            let key_id = r.str("key_id")?;
            let n = r.u32()? as usize;
            let mut values = Vec::with_capacity(n.min(r.remaining() / 4));
            for _ in 0..n {
                values.push(BigUint::from_bytes_be(r.bytes()?));
            }
            Payload::CiphertextVector { key_id, values }
        }
        PayloadKind::PlainFloatVector => {
            let n = r.u32()? as usize;
            let mut values = Vec::with_capacity(n.min(r.remaining() / 8));
            for _ in 0..n {
                values.push(r.f64()?);
            }
            Payload::PlainFloatVector(values)
        }
        PayloadKind::PlainScalar => Payload::PlainScalar(r.f64()?),
        PayloadKind::BoolFlag => Payload::BoolFlag(r.u8()?),
        PayloadKind::IdHashList => {
            let n = r.u32()? as usize;
            let mut items = Vec::with_capacity(n.min(r.remaining() / 4));
            for _ in 0..n {
                items.push(r.bytes()?.to_vec());
            }
            Payload::IdHashList(items)
        }
        PayloadKind::Control => {
            let tag = r.u8()?;
            let command =
                *Command::ALL.get(tag as usize).ok_or(CodecError::BadTag { field: "command", tag })?;
            let component = r.str("component")?;
            let iteration = r.u32()?;
            let detail = r.str("detail")?;
            Payload::Control(ControlCommand { command, component, iteration, detail })
        }
        PayloadKind::OpaqueForbidden => unreachable!("filtered by caller"),
    };
    r.finish()?;
    Ok(payload)
}
