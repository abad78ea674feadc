//! Id alignment. Both variants end with both parties holding the sorted
//! list of common ids.

use super::config::IntersectionKind;
use super::ctx::{PartyCtx, PartyKeys};
use super::dataset::Dataset;
use super::PartyError;
use crate::crypto::rsa::signature_digest;
use crate::crypto::derive_rng;
use crate::messages::{sha256, PartyId, Payload};
use rand::RngCore;
use std::collections::{HashMap, HashSet};

fn salted(salt: &[u8], id: &str) -> Vec<u8> {
    let mut buf = salt.to_vec();
    buf.extend_from_slice(id.as_bytes());
    sha256(&buf).to_vec()
}

fn salt(seed: &[u8; 32]) -> [u8; 32] {
    let mut s = [0u8; 32];
    derive_rng(seed, "psi.salt").unwrap().fill_bytes(&mut s);
    s
}

fn expect_hashes(p: Payload, what: &str) -> Result<Vec<Vec<u8>>, PartyError> {
    match p {
        Payload::IdHashList(v) => Ok(v),
        other => Err(PartyError::Protocol(format!("{what}: expected id hash list, got {}", other.kind()))),
    }
}

fn expect_cts(p: Payload, what: &str) -> Result<Vec<num_bigint::BigUint>, PartyError> {
    match p {
        Payload::CiphertextVector { values, .. } => Ok(values),
        other => Err(PartyError::Protocol(format!("{what}: expected ciphertext vector, got {}", other.kind()))),
    }
}

fn map_back(lookup: &HashMap<Vec<u8>, &String>, digests: &[Vec<u8>]) -> Result<Vec<String>, PartyError> {
    let mut ids = digests
        .iter()
        .map(|d| lookup.get(d).map(|s| (*s).clone()).ok_or_else(|| PartyError::Protocol("intersection has unknown id".into())))
        .collect::<Result<Vec<_>, _>>()?;
    ids.sort();
    ids.dedup();
    Ok(ids)
}

pub fn guest_intersect(
    ctx: &mut PartyCtx,
    task: &str,
    kind: IntersectionKind,
    ds: &Dataset,
    keys: &PartyKeys,
    seed: &[u8; 32],
) -> Result<Vec<String>, PartyError> {
    match kind {
        IntersectionKind::Raw => {
            let salt = salt(seed);
            let lookup: HashMap<Vec<u8>, &String> = ds.ids.iter().map(|id| (salted(&salt, id), id)).collect();
            let mut hashes: Vec<Vec<u8>> = lookup.keys().cloned().collect();
            hashes.sort();
            ctx.send_var(task, "guest_hashes", 0, PartyId::Host, &Payload::IdHashList(hashes))?;
            let inter = expect_hashes(ctx.recv_var(task, "intersection", 0, PartyId::Host)?, "intersection")?;
            map_back(&lookup, &inter)
        }
        IntersectionKind::Rsa => {
            let pk = keys.rsa.as_ref().ok_or_else(|| PartyError::Protocol("guest has no rsa key".into()))?;
            let mut rng = derive_rng(seed, "psi.blind").unwrap();
            let mut blinded = Vec::with_capacity(ds.rows());
            let mut inverses = Vec::with_capacity(ds.rows());
            for id in &ds.ids {
                let h = pk.hash_to_domain(id.as_bytes());
                let (r, r_inv) = pk.blinding_factor(&mut rng);
                blinded.push(pk.blind(&h, &r)?);
                inverses.push(r_inv);
            }
            let key_id = keys.rsa_key_id.clone();
            ctx.send_var(task, "blinded", 0, PartyId::Host, &Payload::CiphertextVector { key_id, values: blinded })?;
            let signed = expect_cts(ctx.recv_var(task, "signed", 0, PartyId::Host)?, "signed")?;
            if signed.len() != ds.rows() {
                return Err(PartyError::Protocol("signed list has wrong length".into()));
            }
            let host_sigs: HashSet<Vec<u8>> =
                expect_hashes(ctx.recv_var(task, "host_sigs", 0, PartyId::Host)?, "host_sigs")?.into_iter().collect();
            let mut lookup = HashMap::new();
            let mut common = Vec::new();
            for ((id, s), r_inv) in ds.ids.iter().zip(&signed).zip(&inverses) {
                let d = signature_digest(&pk.unblind(s, r_inv)).to_vec();
                if host_sigs.contains(&d) {
                    common.push(d.clone());
                }
                lookup.insert(d, id);
            }
            common.sort();
            ctx.send_var(task, "intersection", 0, PartyId::Host, &Payload::IdHashList(common.clone()))?;
            map_back(&lookup, &common)
        }
    }
}

pub fn host_intersect(
    ctx: &mut PartyCtx,
    task: &str,
    kind: IntersectionKind,
    ds: &Dataset,
    keys: &PartyKeys,
    seed: &[u8; 32],
) -> Result<Vec<String>, PartyError> {
    match kind {
        IntersectionKind::Raw => {
            let salt = salt(seed);
            let lookup: HashMap<Vec<u8>, &String> = ds.ids.iter().map(|id| (salted(&salt, id), id)).collect();
            let theirs = expect_hashes(ctx.recv_var(task, "guest_hashes", 0, PartyId::Guest)?, "guest_hashes")?;
            let mut common: Vec<Vec<u8>> = theirs.into_iter().filter(|h| lookup.contains_key(h)).collect();
            common.sort();
            common.dedup();
            ctx.send_var(task, "intersection", 0, PartyId::Guest, &Payload::IdHashList(common.clone()))?;
            map_back(&lookup, &common)
        }
        IntersectionKind::Rsa => {
            let sk = keys.rsa_secret.as_ref().ok_or_else(|| PartyError::Protocol("host has no rsa secret".into()))?;
            let blinded = expect_cts(ctx.recv_var(task, "blinded", 0, PartyId::Guest)?, "blinded")?;
            let signed = blinded.iter().map(|b| sk.sign(b)).collect::<Result<Vec<_>, _>>()?;
            let key_id = keys.rsa_key_id.clone();
            ctx.send_var(task, "signed", 0, PartyId::Guest, &Payload::CiphertextVector { key_id, values: signed })?;
            let mut lookup = HashMap::new();
            for id in &ds.ids {
                let sig = sk.sign(&sk.public.hash_to_domain(id.as_bytes()))?;
                lookup.insert(signature_digest(&sig).to_vec(), id);
            }
            let mut mine: Vec<Vec<u8>> = lookup.keys().cloned().collect();
            mine.sort();
            ctx.send_var(task, "host_sigs", 0, PartyId::Guest, &Payload::IdHashList(mine))?;
            let inter = expect_hashes(ctx.recv_var(task, "intersection", 0, PartyId::Guest)?, "intersection")?;
            map_back(&lookup, &inter)
        }
    }
}
