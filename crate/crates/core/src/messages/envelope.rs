use serde::{Deserialize, Serialize};
use std::fmt;

/// Granularity of an intercepted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowLevel {
    Control,
    Algorithm,
    Data,
}

impl FlowLevel {
    pub(crate) fn tag(self) -> u8 {
        match self {
            FlowLevel::Control => 0,
            FlowLevel::Algorithm => 1,
            FlowLevel::Data => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FlowLevel::Control),
            1 => Some(FlowLevel::Algorithm),
            2 => Some(FlowLevel::Data),
            _ => None,
        }
    }
}

impl fmt::Display for FlowLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FlowLevel::Control => "control",
            FlowLevel::Algorithm => "algorithm",
            FlowLevel::Data => "data",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    Guest,
    Host,
    Coordinator,
    /// Anything that is not a registered job party. Never holds a valid credential.
    External(String),
}

impl PartyId {
    pub fn is_external(&self) -> bool {
        matches!(self, PartyId::External(_))
    }

    /// Parses the display form produced by `Display`.
    pub fn parse(s: &str) -> PartyId {
        match s {
            "guest" => PartyId::Guest,
            "host" => PartyId::Host,
            "coordinator" => PartyId::Coordinator,
            other => PartyId::External(other.strip_prefix("external:").unwrap_or(other).to_string()),
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Guest => f.write_str("guest"),
            PartyId::Host => f.write_str("host"),
            PartyId::Coordinator => f.write_str("coordinator"),
            PartyId::External(name) => write!(f, "external:{name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransferMode {
    Unary,
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub index: u32,
    pub total: u32,
}

impl Partition {
    pub const SINGLE: Partition = Partition { index: 0, total: 1 };

    pub fn new(index: u32, total: u32) -> Self {
        Partition { index, total }
    }
}

/// The unit every inter-party message travels in.
///
/// `payload` is opaque bytes: for unary messages it is a whole encoded
/// [`Payload`](super::Payload); for stream messages it is one chunk of the
/// encoded payload, and the chunks concatenated in partition order give the
/// logical value back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub job_id: String,
    pub task_id: String,
    pub seq: u64,
    pub flow: FlowLevel,
    pub variable: String,
    pub src: PartyId,
    pub dst: PartyId,
    pub transfer_mode: TransferMode,
    pub partition: Partition,
    pub credential: Vec<u8>,
    pub payload: Vec<u8>,
    /// Sender clock, ns.
    pub sent_at: u64,
    /// Receiver clock at delivery, ns. Zero until the gateway stamps it.
    pub recv_at: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("partition index {index} out of range for total {total}")]
    PartitionRange { index: u32, total: u32 },
    #[error("unary envelopes carry exactly one partition (got total {0})")]
    UnaryPartitioned(u32),
    #[error("empty {0}")]
    Empty(&'static str),
}

impl Envelope {
    pub fn validate(&self) -> Result<(), EnvelopeError> {
        let Partition { index, total } = self.partition;
        if total == 0 || index >= total {
            return Err(EnvelopeError::PartitionRange { index, total });
        }
        if self.transfer_mode == TransferMode::Unary && total != 1 {
            return Err(EnvelopeError::UnaryPartitioned(total));
        }
        if self.job_id.is_empty() {
            return Err(EnvelopeError::Empty("job id"));
        }
        if self.variable.is_empty() {
            return Err(EnvelopeError::Empty("variable"));
        }
        Ok(())
    }

    /// Identity of the logical transfer this envelope is a piece of.
    pub fn transfer_key(&self) -> TransferKey {
        TransferKey {
            job_id: self.job_id.clone(),
            task_id: self.task_id.clone(),
            variable: self.variable.clone(),
            src: self.src.clone(),
            dst: self.dst.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransferKey {
    pub job_id: String,
    pub task_id: String,
    pub variable: String,
    pub src: PartyId,
    pub dst: PartyId,
}

/// Transfer-variable name of the form `<task>.<name>.<iteration>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarName {
    pub task: String,
    pub name: String,
    pub iteration: u32,
}

impl VarName {
    pub fn new(task: &str, name: &str, iteration: u32) -> Self {
        VarName { task: task.to_string(), name: name.to_string(), iteration }
    }

    pub fn parse(s: &str) -> Option<VarName> {
        let mut parts = s.split('.');
        let task = parts.next()?;
        let name = parts.next()?;
        let iteration = parts.next()?.parse().ok()?;
        if parts.next().is_some() || task.is_empty() || name.is_empty() {
            return None;
        }
        Some(VarName::new(task, name, iteration))
    }
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.task, self.name, self.iteration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_name_round_trip() {
        let v = VarName::new("train", "host_forward", 7);
        assert_eq!(v.to_string(), "train.host_forward.7");
        assert_eq!(VarName::parse("train.host_forward.7"), Some(v));
        assert_eq!(VarName::parse("submit_job"), None);
        assert_eq!(VarName::parse("a.b.c"), None);
        assert_eq!(VarName::parse("a.b.1.2"), None);
    }

    #[test]
    fn party_display_parse() {
        for p in [PartyId::Guest, PartyId::Host, PartyId::Coordinator, PartyId::External("mallory".into())] {
            assert_eq!(PartyId::parse(&p.to_string()), p);
        }
    }
}
