//! Append-only hash-chained ledger file.
//!
//! Each record is laid out as
//!
//! ```text
//! u32 total_len                      bytes that follow
//! u64 index
//! [32] prev_hash                     zero for the genesis record
//! [32] record_hash                   SHA-256(index ‖ prev_hash ‖ body)
//! u32 body_len, body                 tag byte + content
//! u32 annot_len, annot               JSON, timing only
//! [32] annot_hash                    SHA-256(record_hash ‖ annot)
//! ```
//!
//! Bodies are deterministic for a deterministic job; anything that depends
//! on the wall clock lives in the annotation, which is protected by its own
//! hash but does not feed the chain.

use crate::messages::{content_bytes, deserialize, sha256, CodecError, Digest, Envelope};
use serde_json::Value;
use sha2::{Digest as _, Sha256};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const GENESIS: Digest = [0u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BodyTag {
    JobMetadata = 1,
    Envelope = 2,
    KmsAccess = 3,
    Verdict = 4,
    GatewayAlarm = 5,
    JobEnd = 6,
}

impl BodyTag {
    fn from_u8(t: u8) -> Option<BodyTag> {
        Some(match t {
            1 => BodyTag::JobMetadata,
            2 => BodyTag::Envelope,
            3 => BodyTag::KmsAccess,
            4 => BodyTag::Verdict,
            5 => BodyTag::GatewayAlarm,
            6 => BodyTag::JobEnd,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyTag::JobMetadata => "job_metadata",
            BodyTag::Envelope => "envelope",
            BodyTag::KmsAccess => "kms_access",
            BodyTag::Verdict => "verdict",
            BodyTag::GatewayAlarm => "gateway_alarm",
            BodyTag::JobEnd => "job_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerBody {
    JobMetadata(Value),
    /// Canonical bytes with timestamps zeroed.
    Envelope(Vec<u8>),
    KmsAccess(Value),
    Verdict(Value),
    GatewayAlarm(Value),
    JobEnd(Value),
}

impl LedgerBody {
    pub fn envelope(env: &Envelope) -> LedgerBody {
        LedgerBody::Envelope(content_bytes(env))
    }

    pub fn tag(&self) -> BodyTag {
        match self {
            LedgerBody::JobMetadata(_) => BodyTag::JobMetadata,
            LedgerBody::Envelope(_) => BodyTag::Envelope,
            LedgerBody::KmsAccess(_) => BodyTag::KmsAccess,
            LedgerBody::Verdict(_) => BodyTag::Verdict,
            LedgerBody::GatewayAlarm(_) => BodyTag::GatewayAlarm,
            LedgerBody::JobEnd(_) => BodyTag::JobEnd,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.tag() as u8];
        match self {
            LedgerBody::Envelope(b) => out.extend_from_slice(b),
            LedgerBody::JobMetadata(v)
            | LedgerBody::KmsAccess(v)
            | LedgerBody::Verdict(v)
            | LedgerBody::GatewayAlarm(v)
            | LedgerBody::JobEnd(v) => out.extend_from_slice(&serde_json::to_vec(v).expect("json value")),
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<LedgerBody, String> {
        let (&tag, rest) = bytes.split_first().ok_or("empty body")?;
        let tag = BodyTag::from_u8(tag).ok_or_else(|| format!("unknown body tag {tag}"))?;
        if tag == BodyTag::Envelope {
            return Ok(LedgerBody::Envelope(rest.to_vec()));
        }
        let v: Value = serde_json::from_slice(rest).map_err(|e| e.to_string())?;
        Ok(match tag {
            BodyTag::JobMetadata => LedgerBody::JobMetadata(v),
            BodyTag::KmsAccess => LedgerBody::KmsAccess(v),
            BodyTag::Verdict => LedgerBody::Verdict(v),
            BodyTag::GatewayAlarm => LedgerBody::GatewayAlarm(v),
            BodyTag::JobEnd => LedgerBody::JobEnd(v),
            BodyTag::Envelope => unreachable!(),
        })
    }

    /// The stored envelope, timestamps zero.
    pub fn as_envelope(&self) -> Option<Result<Envelope, CodecError>> {
        match self {
            LedgerBody::Envelope(b) => Some(deserialize(b)),
            _ => None,
        }
    }

    pub fn json(&self) -> Option<&Value> {
        match self {
            LedgerBody::Envelope(_) => None,
            LedgerBody::JobMetadata(v)
            | LedgerBody::KmsAccess(v)
            | LedgerBody::Verdict(v)
            | LedgerBody::GatewayAlarm(v)
            | LedgerBody::JobEnd(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRecord {
    pub index: u64,
    pub prev_hash: Digest,
    pub record_hash: Digest,
    pub body: LedgerBody,
    pub annotation: Value,
    pub annot_hash: Digest,
}

impl LedgerRecord {
    /// SHA-256 of the body bytes; for envelopes this is the content hash.
    pub fn body_hash(&self) -> Digest {
        match &self.body {
            LedgerBody::Envelope(b) => sha256(b),
            other => sha256(&other.encode()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger broken at record {index}: {reason}")]
    Broken { index: u64, reason: String },
    #[error("ledger already exists at {0}")]
    Exists(PathBuf),
}

pub fn record_hash(index: u64, prev: &Digest, body: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(index.to_be_bytes());
    h.update(prev);
    h.update(body);
    h.finalize().into()
}

fn annot_hash(record_hash: &Digest, annot: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(record_hash);
    h.update(annot);
    h.finalize().into()
}

pub struct LedgerWriter {
    path: PathBuf,
    out: BufWriter<File>,
    next_index: u64,
    head: Digest,
}

impl LedgerWriter {
    /// Creates a new ledger. Fails if the file exists.
    pub fn create(path: &Path) -> Result<LedgerWriter, LedgerError> {
        if path.exists() {
            return Err(LedgerError::Exists(path.to_path_buf()));
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create_new(true).write(true).open(path)?;
        Ok(LedgerWriter { path: path.to_path_buf(), out: BufWriter::new(file), next_index: 0, head: GENESIS })
    }

    /// Reopens an existing ledger after verifying it.
    pub fn open_append(path: &Path) -> Result<LedgerWriter, LedgerError> {
        let records = read_verified(path)?;
        let (next_index, head) = records.last().map_or((0, GENESIS), |r| (r.index + 1, r.record_hash));
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(LedgerWriter { path: path.to_path_buf(), out: BufWriter::new(file), next_index, head })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn head(&self) -> Digest {
        self.head
    }

    pub fn len(&self) -> u64 {
        self.next_index
    }

    pub fn is_empty(&self) -> bool {
        self.next_index == 0
    }

    pub fn append(&mut self, body: &LedgerBody, annotation: &Value) -> Result<(u64, Digest), LedgerError> {
        let index = self.next_index;
        let body_bytes = body.encode();
        let rh = record_hash(index, &self.head, &body_bytes);
        let annot = serde_json::to_vec(annotation).expect("json value");
        let ah = annot_hash(&rh, &annot);
        let total = 8 + 32 + 32 + 4 + body_bytes.len() + 4 + annot.len() + 32;
        let mut rec = Vec::with_capacity(4 + total);
        rec.extend_from_slice(&(total as u32).to_be_bytes());
        rec.extend_from_slice(&index.to_be_bytes());
        rec.extend_from_slice(&self.head);
        rec.extend_from_slice(&rh);
        rec.extend_from_slice(&(body_bytes.len() as u32).to_be_bytes());
        rec.extend_from_slice(&body_bytes);
        rec.extend_from_slice(&(annot.len() as u32).to_be_bytes());
        rec.extend_from_slice(&annot);
        rec.extend_from_slice(&ah);
        self.out.write_all(&rec)?;
        self.out.flush()?;
        self.head = rh;
        self.next_index += 1;
        Ok((index, rh))
    }

    pub fn sync(&mut self) -> Result<(), LedgerError> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn digest(&mut self) -> Option<Digest> {
        self.take(32).map(|b| b.try_into().unwrap())
    }
}

fn parse_record(raw: &[u8], expected_index: u64, prev: &Digest) -> Result<LedgerRecord, String> {
    let mut c = Cursor { buf: raw, pos: 0 };
    let index = c.u64().ok_or("short header")?;
    let prev_hash = c.digest().ok_or("short header")?;
    let rh = c.digest().ok_or("short header")?;
    let body_len = c.u32().ok_or("short header")? as usize;
    let body = c.take(body_len).ok_or("body overruns record")?;
    let annot_len = c.u32().ok_or("missing annotation")? as usize;
    let annot = c.take(annot_len).ok_or("annotation overruns record")?;
    let ah = c.digest().ok_or("missing annotation hash")?;
    if c.pos != raw.len() {
        return Err("trailing bytes in record".into());
    }
    if index != expected_index {
        return Err(format!("index field {index}, expected {expected_index}"));
    }
    if &prev_hash != prev {
        return Err("prev_hash does not link to previous record".into());
    }
    if record_hash(index, &prev_hash, body) != rh {
        return Err("record_hash mismatch".into());
    }
    if annot_hash(&rh, annot) != ah {
        return Err("annotation hash mismatch".into());
    }
    let body = LedgerBody::decode(body)?;
    let annotation = serde_json::from_slice(annot).map_err(|e| e.to_string())?;
    Ok(LedgerRecord { index, prev_hash, record_hash: rh, body, annotation, annot_hash: ah })
}

/// Parses and verifies a whole ledger image.
pub fn parse_verified(bytes: &[u8]) -> Result<Vec<LedgerRecord>, LedgerError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    let mut prev = GENESIS;
    while pos < bytes.len() {
        let index = out.len() as u64;
        let broken = |reason: String| LedgerError::Broken { index, reason };
        let len_bytes = bytes.get(pos..pos + 4).ok_or_else(|| broken("truncated length prefix".into()))?;
        let total = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        let raw = bytes.get(pos + 4..pos + 4 + total).ok_or_else(|| broken("truncated record".into()))?;
        let rec = parse_record(raw, index, &prev).map_err(broken)?;
        prev = rec.record_hash;
        out.push(rec);
        pos += 4 + total;
    }
    Ok(out)
}

pub fn read_verified(path: &Path) -> Result<Vec<LedgerRecord>, LedgerError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_verified(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainStatus {
    Ok { records: u64, head: Digest },
    Broken { first_bad_index: u64, reason: String },
}

/// Recomputes every hash and reports the first index whose record or
/// linkage does not verify. I/O failures are errors, not statuses.
pub fn verify_chain(path: &Path) -> Result<ChainStatus, std::io::Error> {
    let bytes = std::fs::read(path)?;
    Ok(match parse_verified(&bytes) {
        Ok(records) => ChainStatus::Ok {
            records: records.len() as u64,
            head: records.last().map_or(GENESIS, |r| r.record_hash),
        },
        Err(LedgerError::Broken { index, reason }) => ChainStatus::Broken { first_bad_index: index, reason },
        Err(LedgerError::Io(e)) => return Err(e),
        Err(LedgerError::Exists(_)) => unreachable!(),
    })
}

/// Byte offsets `(start, end)` of each record, without verification.
pub fn record_offsets(bytes: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + 4 <= bytes.len() {
        let total = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = (pos + 4 + total).min(bytes.len());
        out.push((pos, end));
        pos = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write(n: u64) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let mut w = LedgerWriter::create(&path).unwrap();
        for i in 0..n {
            w.append(&LedgerBody::Verdict(json!({ "i": i, "pad": "x".repeat(40) })), &json!({ "t": i })).unwrap();
        }
        (dir, path)
    }

    fn broken_at(path: &Path) -> Option<u64> {
        match verify_chain(path).unwrap() {
            ChainStatus::Ok { .. } => None,
            ChainStatus::Broken { first_bad_index, .. } => Some(first_bad_index),
        }
    }

    #[test]
    fn genesis_and_chain() {
        let (_d, path) = write(3);
        let recs = read_verified(&path).unwrap();
        assert_eq!(recs[0].prev_hash, GENESIS);
        assert_eq!(recs[2].prev_hash, recs[1].record_hash);
        assert_eq!(broken_at(&path), None);
    }

    #[test]
    fn every_single_bit_flip_in_a_record_is_detected() {
        let (_d, path) = write(3);
        let clean = std::fs::read(&path).unwrap();
        let (start, end) = record_offsets(&clean)[1];
        for byte in start..end {
            for bit in 0..8 {
                let mut bad = clean.clone();
                bad[byte] ^= 1 << bit;
                std::fs::write(&path, &bad).unwrap();
                assert_eq!(broken_at(&path), Some(1), "byte {byte} bit {bit}");
            }
        }
    }

    #[test]
    fn truncation_and_reorder() {
        let (_d, path) = write(4);
        let clean = std::fs::read(&path).unwrap();
        std::fs::write(&path, &clean[..clean.len() - 5]).unwrap();
        assert_eq!(broken_at(&path), Some(3));

        let offs = record_offsets(&clean);
        let mut swapped = clean[..offs[1].0].to_vec();
        swapped.extend_from_slice(&clean[offs[2].0..offs[2].1]);
        swapped.extend_from_slice(&clean[offs[1].0..offs[1].1]);
        swapped.extend_from_slice(&clean[offs[3].0..]);
        std::fs::write(&path, &swapped).unwrap();
        assert_eq!(broken_at(&path), Some(1));
    }

    #[test]
    fn reopen_continues_chain() {
        let (_d, path) = write(2);
        let mut w = LedgerWriter::open_append(&path).unwrap();
        assert_eq!(w.len(), 2);
        w.append(&LedgerBody::JobEnd(json!({})), &json!({})).unwrap();
        drop(w);
        assert_eq!(read_verified(&path).unwrap().len(), 3);
        assert!(matches!(LedgerWriter::create(&path), Err(LedgerError::Exists(_))));
    }
}
