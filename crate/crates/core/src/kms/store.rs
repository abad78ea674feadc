//! Encrypted key store file: `"VKS1" ‖ nonce[12] ‖ ChaCha20-Poly1305(json)`.
//! The encryption key is SHA-256 of the master secret.

use super::{KeyRecord, Kms};
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const MASTER_SECRET_ENV: &str = "VFLGUARD_KMS_SECRET";
const MAGIC: &[u8; 4] = b"VKS1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("key store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("key store is not a VKS1 file")]
    BadMagic,
    #[error("key store does not decrypt under this master secret")]
    Decrypt,
    #[error("key store contents: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    keys: Vec<KeyRecord>,
    jobs: BTreeMap<String, BTreeSet<String>>,
}

fn cipher(secret: &[u8]) -> ChaCha20Poly1305 {
    let k: [u8; 32] = Sha256::digest(secret).into();
    ChaCha20Poly1305::new(Key::from_slice(&k))
}

pub fn save_store(kms: &Kms, path: &Path, secret: &[u8]) -> Result<(), StoreError> {
    let json = serde_json::to_vec(&Snapshot { keys: kms.export(), jobs: kms.export_jobs() })?;
    let mut nonce = [0u8; 12];
    OsRng.fill_bytes(&mut nonce);
    let ct = cipher(secret).encrypt(Nonce::from_slice(&nonce), json.as_slice()).map_err(|_| StoreError::Decrypt)?;
    let mut out = Vec::with_capacity(16 + ct.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_store(kms: &Kms, path: &Path, secret: &[u8]) -> Result<(), StoreError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let pt = cipher(secret).decrypt(Nonce::from_slice(&bytes[4..16]), &bytes[16..]).map_err(|_| StoreError::Decrypt)?;
    let snap: Snapshot = serde_json::from_slice(&pt)?;
    kms.import(snap.keys, snap.jobs);
    Ok(())
}
