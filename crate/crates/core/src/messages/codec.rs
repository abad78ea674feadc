//! Canonical envelope encoding.
//!
//! Layout (all integers big-endian, strings and byte fields prefixed with a
//! `u32` length):
//!
//! ```text
//! magic        4   "VFE1"
//! job_id       str
//! task_id      str
//! seq          u64
//! flow         u8    0 control, 1 algorithm, 2 data
//! variable     str
//! src          party u8 tag (0 guest, 1 host, 2 coordinator, 3 external + str)
//! dst          party
//! mode         u8    0 unary, 1 stream
//! part_index   u32
//! part_total   u32
//! credential   bytes
//! payload      bytes
//! sent_at      u64
//! recv_at      u64
//! ```

use super::envelope::{Envelope, EnvelopeError, FlowLevel, Partition, PartyId, TransferMode};
use sha2::{Digest as _, Sha256};

pub const MAGIC: &[u8; 4] = b"VFE1";

pub type Digest = [u8; 32];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("invalid {field} tag {tag}")]
    BadTag { field: &'static str, tag: u8 },
    #[error("invalid utf-8 in {0}")]
    Utf8(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error(transparent)]
    Invalid(#[from] EnvelopeError),
}

/// Append-only big-endian writer shared by the canonical encoders.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Writer { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn party(&mut self, p: &PartyId) -> &mut Self {
        match p {
            PartyId::Guest => self.u8(0),
            PartyId::Host => self.u8(1),
            PartyId::Coordinator => self.u8(2),
            PartyId::External(name) => self.u8(3).str(name),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over canonical bytes.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str(&mut self, field: &'static str) -> Result<String, CodecError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::Utf8(field))
    }

    pub fn party(&mut self) -> Result<PartyId, CodecError> {
        match self.u8()? {
            0 => Ok(PartyId::Guest),
            1 => Ok(PartyId::Host),
            2 => Ok(PartyId::Coordinator),
            3 => Ok(PartyId::External(self.str("party")?)),
            tag => Err(CodecError::BadTag { field: "party", tag }),
        }
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

pub fn serialize(env: &Envelope) -> Vec<u8> {
    encode(env, env.sent_at, env.recv_at)
}

fn encode(env: &Envelope, sent_at: u64, recv_at: u64) -> Vec<u8> {
    let mut w = Writer::with_capacity(96 + env.payload.len() + env.credential.len());
    w.raw(MAGIC)
        .str(&env.job_id)
        .str(&env.task_id)
        .u64(env.seq)
        .u8(env.flow.tag())
        .str(&env.variable)
        .party(&env.src)
        .party(&env.dst)
        .u8(match env.transfer_mode {
            TransferMode::Unary => 0,
            TransferMode::Stream => 1,
        })
        .u32(env.partition.index)
        .u32(env.partition.total)
        .bytes(&env.credential)
        .bytes(&env.payload)
        .u64(sent_at)
        .u64(recv_at);
    w.finish()
}

pub fn deserialize(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let job_id = r.str("job_id")?;
    let task_id = r.str("task_id")?;
    let seq = r.u64()?;
    let flow_tag = r.u8()?;
    let flow = FlowLevel::from_tag(flow_tag).ok_or(CodecError::BadTag { field: "flow", tag: flow_tag })?;
    let variable = r.str("variable")?;
    let src = r.party()?;
    let dst = r.party()?;
    let transfer_mode = match r.u8()? {
        0 => TransferMode::Unary,
        1 => TransferMode::Stream,
        tag => return Err(CodecError::BadTag { field: "transfer_mode", tag }),
    };
    let partition = Partition { index: r.u32()?, total: r.u32()? };
    let credential = r.bytes()?.to_vec();
    let payload = r.bytes()?.to_vec();
    let sent_at = r.u64()?;
    let recv_at = r.u64()?;
    r.finish()?;
    let env = Envelope {
        job_id,
        task_id,
        seq,
        flow,
        variable,
        src,
        dst,
        transfer_mode,
        partition,
        credential,
        payload,
        sent_at,
        recv_at,
    };
    env.validate()?;
    Ok(env)
}

/// Canonical encoding with both timestamps zeroed. This is what the ledger
/// stores and what [`content_hash`] digests.
pub fn content_bytes(env: &Envelope) -> Vec<u8> {
    encode(env, 0, 0)
}

pub fn content_hash(env: &Envelope) -> Digest {
    sha256(&content_bytes(env))
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> Envelope {
        Envelope {
            job_id: "job-1".into(),
            task_id: "train".into(),
            seq: 3,
            flow: FlowLevel::Algorithm,
            variable: "train.stop_flag.2".into(),
            src: PartyId::Guest,
            dst: PartyId::Host,
            transfer_mode: TransferMode::Stream,
            partition: Partition::new(2, 8),
            credential: vec![1, 2, 3],
            payload: vec![4, 0],
            sent_at: 1_000,
            recv_at: 51_000,
        }
    }

    #[test]
    fn round_trip() {
        let env = sample();
        let bytes = serialize(&env);
        assert_eq!(deserialize(&bytes).unwrap(), env);
        assert_eq!(serialize(&env.clone()), bytes);
    }

    #[test]
    fn partition_index_only_differs_at_its_offset() {
        let a = sample();
        let mut b = sample();
        b.partition.index = 3;
        let (sa, sb) = (serialize(&a), serialize(&b));
        assert_eq!(sa.len(), sb.len());
        let diffs: Vec<usize> = (0..sa.len()).filter(|&i| sa[i] != sb[i]).collect();
        // magic + job_id + task_id + seq + flow + variable + src + dst + mode
        let offset = 4 + (4 + 5) + (4 + 5) + 8 + 1 + (4 + 17) + 1 + 1 + 1;
        assert_eq!(diffs, vec![offset + 3]);
        assert_eq!(sa[offset + 3], 2);
        assert_eq!(sb[offset + 3], 3);
    }

    #[test]
    fn hash_ignores_timestamps() {
        let a = sample();
        let mut b = sample();
        b.sent_at = 77;
        b.recv_at = 99_999;
        assert_eq!(content_hash(&a), content_hash(&b));
        assert_ne!(serialize(&a), serialize(&b));
        let mut c = sample();
        c.payload[1] ^= 1;
        assert_ne!(content_hash(&a), content_hash(&c));
    }

    #[test]
    fn golden_digest() {
        // Bytes built by hand from the documented layout; digest from
        // coreutils `sha256sum` over those bytes.
        assert_eq!(
            hex::encode(content_bytes(&sample())),
            concat!(
                "56464531000000056a6f622d3100000005747261696e00000000000000030100000011",
                "747261696e2e73746f705f666c61672e32000101000000020000000800000003010203",
                "00000002040000000000000000000000000000000000",
            )
        );
        assert_eq!(hex::encode(content_hash(&sample())), GOLDEN);
    }

    const GOLDEN: &str = "b1b9372f0ae1d16b755b90e367f41c0a507d1f090e0c30ce87310f097588ff66";

    #[test]
    fn rejects_invalid() {
        let mut env = sample();
        env.partition = Partition::new(8, 8);
        let bytes = serialize(&env);
        assert!(matches!(deserialize(&bytes), Err(CodecError::Invalid(_))));
        let bytes = serialize(&sample());
        assert!(matches!(deserialize(&bytes[..bytes.len() - 1]), Err(CodecError::Truncated(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(deserialize(&extra), Err(CodecError::Trailing(1)));
    }
}
