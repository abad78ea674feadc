use crate::messages::{Reader, Writer};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

const MAGIC: &[u8; 4] = b"VCR1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub principal: String,
    pub job_id: String,
    pub issued_at: u64,
    pub expiry: u64,
}

/// HMAC-SHA256 token over the claims, keyed by the job's token signing key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub claims: Claims,
    pub signature: [u8; 32],
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CredentialError {
    #[error("malformed credential")]
    Malformed,
    #[error("signature does not verify")]
    BadSignature,
    #[error("credential expired")]
    Expired,
    #[error("no token key for job")]
    UnknownJob,
    #[error("principal not registered for job")]
    NotRegistered,
}

fn claims_bytes(c: &Claims) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(MAGIC).str(&c.principal).str(&c.job_id).u64(c.issued_at).u64(c.expiry);
    w.finish()
}

fn mac(key: &[u8], c: &Claims) -> Hmac<Sha256> {
    let mut m = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    m.update(&claims_bytes(c));
    m
}

impl Credential {
    pub fn sign(key: &[u8], principal: &str, job_id: &str, issued_at: u64, expiry: u64) -> Credential {
        let claims = Claims { principal: principal.to_string(), job_id: job_id.to_string(), issued_at, expiry };
        let signature = mac(key, &claims).finalize().into_bytes().into();
        Credential { claims, signature }
    }

    pub fn verify(&self, key: &[u8], now: u64) -> Result<(), CredentialError> {
        mac(key, &self.claims).verify_slice(&self.signature).map_err(|_| CredentialError::BadSignature)?;
        if now >= self.claims.expiry {
            return Err(CredentialError::Expired);
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = claims_bytes(&self.claims);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Credential, CredentialError> {
        let mut r = Reader::new(bytes);
        let bad = |_| CredentialError::Malformed;
        if r.take(4).map_err(bad)? != MAGIC {
            return Err(CredentialError::Malformed);
        }
        let principal = r.str("principal").map_err(bad)?;
        let job_id = r.str("job_id").map_err(bad)?;
        let issued_at = r.u64().map_err(bad)?;
        let expiry = r.u64().map_err(bad)?;
        let signature: [u8; 32] = r.take(32).map_err(bad)?.try_into().map_err(|_| CredentialError::Malformed)?;
        r.finish().map_err(bad)?;
        Ok(Credential { claims: Claims { principal, job_id, issued_at, expiry }, signature })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_verify() {
        let c = Credential::sign(b"k", "guest", "j", 5, 10);
        let d = Credential::decode(&c.encode()).unwrap();
        assert_eq!(c, d);
        assert!(d.verify(b"k", 9).is_ok());
        assert_eq!(d.verify(b"k", 10), Err(CredentialError::Expired));
        assert_eq!(d.verify(b"other", 9), Err(CredentialError::BadSignature));
    }

    #[test]
    fn truncated_is_malformed() {
        let bytes = Credential::sign(b"k", "guest", "j", 0, 1).encode();
        for n in [0, 3, 10, bytes.len() - 1] {
            assert_eq!(Credential::decode(&bytes[..n]), Err(CredentialError::Malformed));
        }
    }
}
