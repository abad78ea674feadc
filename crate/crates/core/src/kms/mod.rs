//! Per-job key management with ACLs, signed credentials and an access log.

mod credential;
mod store;

pub use credential::{Claims, Credential, CredentialError};
pub use store::{load_store, save_store, StoreError, MASTER_SECRET_ENV};

use crate::crypto::{derive_rng, PaillierKeyPair, RsaKeyPair};
use crate::messages::PartyId;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

/// Principal with unconditional read access to every key.
pub const SUPERUSER: &str = "verifier";

pub const DEFAULT_KEY_LIFETIME: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    Paillier,
    Rsa,
    TokenSigning,
}

impl KeyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyKind::Paillier => "paillier",
            KeyKind::Rsa => "rsa",
            KeyKind::TokenSigning => "token_signing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Right {
    /// Public part only.
    Use,
    /// Secret material.
    Read,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPart {
    Public,
    Secret,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyState {
    Active,
    Expired,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub key_id: String,
    pub job_id: String,
    pub kind: KeyKind,
    #[serde(with = "hex_bytes")]
    pub public: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub material: Vec<u8>,
    pub owner: String,
    pub acl: BTreeMap<String, BTreeSet<Right>>,
    pub state: KeyState,
    pub created_at: u64,
    pub expires_at: u64,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// One granted or denied access, mirrored to the job ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub key_id: String,
    pub principal: String,
    pub action: String,
    pub granted: bool,
    pub reason: String,
    pub at: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KmsError {
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("key {0} already exists")]
    Conflict(String),
    #[error("{principal} may not read the {part:?} part of {key_id}")]
    AccessDenied { principal: String, key_id: String, part: KeyPart },
    #[error("key {key_id} is {state:?}")]
    State { key_id: String, state: KeyState },
    #[error("invalid credential: {0}")]
    InvalidCredential(#[from] CredentialError),
    #[error("job {0} is not registered")]
    UnknownJob(String),
}

type Sink = Box<dyn Fn(&AccessRecord) + Send + Sync>;

#[derive(Default)]
struct Inner {
    keys: BTreeMap<String, KeyRecord>,
    /// job id → registered principals
    jobs: BTreeMap<String, BTreeSet<String>>,
}

/// In-process KMS. Time is logical and advanced by the caller.
pub struct Kms {
    inner: RwLock<Inner>,
    log: Mutex<Vec<AccessRecord>>,
    sink: Mutex<Option<Sink>>,
    now: Mutex<u64>,
}

impl Default for Kms {
    fn default() -> Self {
        Kms::new()
    }
}

pub fn key_id(job_id: &str, kind: KeyKind) -> String {
    format!("{job_id}.{}", kind.as_str())
}

pub fn principal(p: &PartyId) -> String {
    p.to_string()
}

impl Kms {
    pub fn new() -> Kms {
        Kms { inner: RwLock::new(Inner::default()), log: Mutex::new(Vec::new()), sink: Mutex::new(None), now: Mutex::new(0) }
    }

    pub fn shared() -> Arc<Kms> {
        Arc::new(Kms::new())
    }

    pub fn now(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    pub fn set_time(&self, t: u64) {
        *self.now.lock().unwrap() = t;
    }

    /// Routes every subsequent access record to `f` as well as the local log.
    pub fn set_sink(&self, f: impl Fn(&AccessRecord) + Send + Sync + 'static) {
        *self.sink.lock().unwrap() = Some(Box::new(f));
    }

    pub fn clear_sink(&self) {
        *self.sink.lock().unwrap() = None;
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.log.lock().unwrap().clone()
    }

    fn record(&self, key_id: &str, principal: &str, action: &str, granted: bool, reason: &str) {
        let rec = AccessRecord {
            key_id: key_id.to_string(),
            principal: principal.to_string(),
            action: action.to_string(),
            granted,
            reason: reason.to_string(),
            at: self.now(),
        };
        if let Some(sink) = self.sink.lock().unwrap().as_ref() {
            sink(&rec);
        }
        self.log.lock().unwrap().push(rec);
        if !granted {
            tracing::warn!(key_id, principal, action, reason, "kms access denied");
        }
    }

    /// Registers the job's principals and creates its token signing key.
    pub fn register_job(&self, job_id: &str, principals: &[PartyId], seed: Option<&[u8; 32]>) -> Result<(), KmsError> {
        {
            let mut inner = self.inner.write().unwrap();
            inner.jobs.insert(job_id.to_string(), principals.iter().map(principal).collect());
        }
        self.create_key(job_id, KeyKind::TokenSigning, &PartyId::Coordinator, &[], 0, seed)?;
        Ok(())
    }

    pub fn is_registered(&self, job_id: &str, principal: &str) -> bool {
        principal == SUPERUSER
            || self.inner.read().unwrap().jobs.get(job_id).is_some_and(|set| set.contains(principal))
    }

    /// Creates `<job_id>.<kind>`. With `seed` the material is derived from
    /// `derive_rng(seed, "kms.keygen.<kind>")`, otherwise from OS entropy.
    pub fn create_key(
        &self,
        job_id: &str,
        kind: KeyKind,
        owner: &PartyId,
        users: &[PartyId],
        modulus_bits: u64,
        seed: Option<&[u8; 32]>,
    ) -> Result<String, KmsError> {
        let id = key_id(job_id, kind);
        if self.inner.read().unwrap().keys.contains_key(&id) {
            return Err(KmsError::Conflict(id));
        }
        let mut rng: Box<dyn RngCore> = match seed {
            Some(s) => Box::new(derive_rng(s, &format!("kms.keygen.{}", kind.as_str())).expect("label")),
            None => Box::new(OsRng),
        };
        let (public, material) = match kind {
            KeyKind::Paillier => {
                let kp = PaillierKeyPair::generate(&id, modulus_bits, &mut *rng);
                (kp.public.encode(), kp.secret.encode())
            }
            KeyKind::Rsa => {
                let kp = RsaKeyPair::generate(modulus_bits, &mut *rng);
                let public = kp.public.n.to_bytes_be();
                (public, kp.encode())
            }
            KeyKind::TokenSigning => {
                let mut k = vec![0u8; 32];
                rng.fill_bytes(&mut k);
                (Vec::new(), k)
            }
        };
        let owner_p = principal(owner);
        let mut acl = BTreeMap::new();
        acl.insert(owner_p.clone(), BTreeSet::from([Right::Use, Right::Read]));
        for u in users {
            acl.entry(principal(u)).or_insert_with(BTreeSet::new).insert(Right::Use);
        }
        let now = self.now();
        let rec = KeyRecord {
            key_id: id.clone(),
            job_id: job_id.to_string(),
            kind,
            public,
            material,
            owner: owner_p.clone(),
            acl,
            state: KeyState::Active,
            created_at: now,
            expires_at: now + DEFAULT_KEY_LIFETIME,
        };
        self.inner.write().unwrap().keys.insert(id.clone(), rec);
        self.record(&id, &owner_p, "create", true, "created");
        Ok(id)
    }

    fn effective_state(&self, rec: &KeyRecord) -> KeyState {
        match rec.state {
            KeyState::Active if self.now() >= rec.expires_at => KeyState::Expired,
            s => s,
        }
    }

    /// Returns the requested part iff the credential is valid and the ACL
    /// (or superuser status) allows it. Every call is logged.
    pub fn get_key(&self, key_id: &str, credential: &[u8], part: KeyPart) -> Result<Vec<u8>, KmsError> {
        let action = match part {
            KeyPart::Public => "get_public",
            KeyPart::Secret => "get_secret",
        };
        let rec = match self.inner.read().unwrap().keys.get(key_id) {
            Some(r) => r.clone(),
            None => {
                self.record(key_id, "?", action, false, "unknown key");
                return Err(KmsError::UnknownKey(key_id.to_string()));
            }
        };
        let claims = match self.verify_credential(credential) {
            Ok(c) => c,
            Err(e) => {
                self.record(key_id, "?", action, false, &e.to_string());
                return Err(e.into());
            }
        };
        let who = claims.principal.clone();
        if who != SUPERUSER && claims.job_id != rec.job_id {
            self.record(key_id, &who, action, false, "credential for another job");
            return Err(KmsError::AccessDenied { principal: who, key_id: key_id.to_string(), part });
        }
        let state = self.effective_state(&rec);
        if state != KeyState::Active {
            self.record(key_id, &who, action, false, "key not active");
            return Err(KmsError::State { key_id: key_id.to_string(), state });
        }
        let rights = rec.acl.get(&who);
        let allowed = who == SUPERUSER
            || match part {
                KeyPart::Public => rights.is_some_and(|r| !r.is_empty()),
                KeyPart::Secret => rights.is_some_and(|r| r.contains(&Right::Read)),
            };
        if !allowed {
            self.record(key_id, &who, action, false, "acl");
            return Err(KmsError::AccessDenied { principal: who, key_id: key_id.to_string(), part });
        }
        self.record(key_id, &who, action, true, if who == SUPERUSER { "superuser" } else { "acl" });
        Ok(match part {
            KeyPart::Public => rec.public,
            KeyPart::Secret => rec.material,
        })
    }

    /// Public material needs no credential; it is what the rule checker uses
    /// for domain checks.
    pub fn public_part(&self, key_id: &str) -> Option<(KeyKind, Vec<u8>)> {
        self.inner.read().unwrap().keys.get(key_id).map(|r| (r.kind, r.public.clone()))
    }

    pub fn revoke(&self, key_id: &str) -> Result<(), KmsError> {
        let mut inner = self.inner.write().unwrap();
        let rec = inner.keys.get_mut(key_id).ok_or_else(|| KmsError::UnknownKey(key_id.to_string()))?;
        if rec.state == KeyState::Active {
            rec.state = KeyState::Revoked;
        }
        drop(inner);
        self.record(key_id, SUPERUSER, "revoke", true, "revoked");
        Ok(())
    }

    pub fn key_ids(&self) -> Vec<String> {
        self.inner.read().unwrap().keys.keys().cloned().collect()
    }

    pub fn record_of(&self, key_id: &str) -> Option<KeyRecord> {
        self.inner.read().unwrap().keys.get(key_id).cloned()
    }

    fn token_key(&self, job_id: &str) -> Option<Vec<u8>> {
        let inner = self.inner.read().unwrap();
        let rec = inner.keys.get(&key_id(job_id, KeyKind::TokenSigning))?;
        (rec.state == KeyState::Active).then(|| rec.material.clone())
    }

    /// Issues a token for `principal`. The superuser can hold a token for
    /// any registered job.
    pub fn issue_credential(&self, principal: &str, job_id: &str) -> Result<Vec<u8>, KmsError> {
        let key = self.token_key(job_id).ok_or_else(|| KmsError::UnknownJob(job_id.to_string()))?;
        let issued_at = self.now();
        let cred = Credential::sign(&key, principal, job_id, issued_at, issued_at + DEFAULT_KEY_LIFETIME);
        Ok(cred.encode())
    }

    /// Coarse check: well-formed, signed by the job's token key, unexpired,
    /// and issued to a principal registered for the job.
    pub fn verify_credential(&self, bytes: &[u8]) -> Result<Claims, CredentialError> {
        let cred = Credential::decode(bytes)?;
        let key = self.token_key(&cred.claims.job_id).ok_or(CredentialError::UnknownJob)?;
        cred.verify(&key, self.now())?;
        if !self.is_registered(&cred.claims.job_id, &cred.claims.principal) {
            return Err(CredentialError::NotRegistered);
        }
        Ok(cred.claims)
    }

    pub(crate) fn export(&self) -> Vec<KeyRecord> {
        self.inner.read().unwrap().keys.values().cloned().collect()
    }

    pub(crate) fn export_jobs(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.inner.read().unwrap().jobs.clone()
    }

    pub(crate) fn import(&self, keys: Vec<KeyRecord>, jobs: BTreeMap<String, BTreeSet<String>>) {
        let mut inner = self.inner.write().unwrap();
        for k in keys {
            inner.keys.insert(k.key_id.clone(), k);
        }
        inner.jobs.extend(jobs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> Kms {
        let kms = Kms::new();
        let seed = [1u8; 32];
        kms.register_job("j", &[PartyId::Guest, PartyId::Host, PartyId::Coordinator], Some(&seed)).unwrap();
        kms.create_key("j", KeyKind::Paillier, &PartyId::Guest, &[PartyId::Host], 256, Some(&seed)).unwrap();
        kms
    }

    #[test]
    fn acl_scenario() {
        let kms = setup();
        let g = kms.issue_credential("guest", "j").unwrap();
        let h = kms.issue_credential("host", "j").unwrap();
        let v = kms.issue_credential(SUPERUSER, "j").unwrap();
        assert!(kms.get_key("j.paillier", &g, KeyPart::Secret).is_ok());
        assert!(kms.get_key("j.paillier", &h, KeyPart::Public).is_ok());
        assert!(matches!(kms.get_key("j.paillier", &h, KeyPart::Secret), Err(KmsError::AccessDenied { .. })));
        assert!(kms.get_key("j.paillier", &v, KeyPart::Secret).is_ok());
        let log = kms.access_log();
        let denied: Vec<_> = log.iter().filter(|r| !r.granted).collect();
        assert_eq!(denied.len(), 1);
        assert_eq!(denied[0].principal, "host");
    }

    #[test]
    fn expired_and_revoked_keys_denied() {
        let kms = setup();
        let g = kms.issue_credential("guest", "j").unwrap();
        kms.revoke("j.paillier").unwrap();
        assert!(matches!(kms.get_key("j.paillier", &g, KeyPart::Public), Err(KmsError::State { .. })));

        let kms = setup();
        let g = kms.issue_credential("guest", "j").unwrap();
        kms.set_time(DEFAULT_KEY_LIFETIME + 1);
        let err = kms.get_key("j.paillier", &g, KeyPart::Secret).unwrap_err();
        // The credential itself expires at the same horizon.
        assert!(matches!(err, KmsError::InvalidCredential(CredentialError::Expired)));
    }

    #[test]
    fn expired_key_with_fresh_credential() {
        let kms = setup();
        kms.set_time(DEFAULT_KEY_LIFETIME - 10);
        let g = kms.issue_credential("guest", "j").unwrap();
        kms.set_time(DEFAULT_KEY_LIFETIME + 1);
        assert!(matches!(
            kms.get_key("j.paillier", &g, KeyPart::Public),
            Err(KmsError::State { state: KeyState::Expired, .. })
        ));
    }

    #[test]
    fn duplicate_key_conflicts() {
        let kms = setup();
        let err = kms.create_key("j", KeyKind::Paillier, &PartyId::Guest, &[], 256, None).unwrap_err();
        assert_eq!(err, KmsError::Conflict("j.paillier".into()));
    }

    #[test]
    fn credentials() {
        let kms = setup();
        let mut c = kms.issue_credential("guest", "j").unwrap();
        assert_eq!(kms.verify_credential(&c).unwrap().principal, "guest");
        let last = c.len() - 1;
        c[last] ^= 1;
        assert_eq!(kms.verify_credential(&c).unwrap_err(), CredentialError::BadSignature);
        let m = kms.issue_credential("external:mallory", "j").unwrap();
        assert_eq!(kms.verify_credential(&m).unwrap_err(), CredentialError::NotRegistered);
        assert!(kms.verify_credential(b"garbage").is_err());
    }

    #[test]
    fn seeded_keys_are_reproducible() {
        let a = setup();
        let b = setup();
        assert_eq!(a.record_of("j.paillier").unwrap().material, b.record_of("j.paillier").unwrap().material);
        assert_eq!(a.issue_credential("host", "j").unwrap(), b.issue_credential("host", "j").unwrap());
    }
}
