//! RSA blind signatures for private set intersection.

use super::prime::{gen_prime, random_unit};
use super::CryptoError;
use crate::messages::{Reader, Writer};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::RngCore;
use sha2::{Digest, Sha256};

pub const PUBLIC_EXPONENT: u32 = 65537;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaPublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaKeyPair {
    pub public: RsaPublicKey,
    pub d: BigUint,
    pub modulus_bits: u64,
}

impl RsaKeyPair {
    pub fn generate<R: RngCore + ?Sized>(modulus_bits: u64, rng: &mut R) -> RsaKeyPair {
        let e = BigUint::from(PUBLIC_EXPONENT);
        loop {
            let p = gen_prime(rng, modulus_bits / 2);
            let q = gen_prime(rng, modulus_bits / 2);
            if p == q {
                continue;
            }
            let phi = (&p - 1u8) * (&q - 1u8);
            if let Some(d) = e.modinv(&phi) {
                return RsaKeyPair { public: RsaPublicKey { n: p * q, e }, d, modulus_bits };
            }
        }
    }

    pub fn sign(&self, blinded: &BigUint) -> Result<BigUint, CryptoError> {
        if blinded >= &self.public.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        Ok(blinded.modpow(&self.d, &self.public.n))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.public.n.to_bytes_be()).bytes(&self.public.e.to_bytes_be()).bytes(&self.d.to_bytes_be());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<RsaKeyPair, CryptoError> {
        let bad = |_| CryptoError::Malformed("rsa key");
        let mut r = Reader::new(bytes);
        let n = BigUint::from_bytes_be(r.bytes().map_err(bad)?);
        let e = BigUint::from_bytes_be(r.bytes().map_err(bad)?);
        let d = BigUint::from_bytes_be(r.bytes().map_err(bad)?);
        r.finish().map_err(bad)?;
        let modulus_bits = n.bits();
        Ok(RsaKeyPair { public: RsaPublicKey { n, e }, d, modulus_bits })
    }
}

impl RsaPublicKey {
    /// Full-domain hash of an id into `Z_n`.
    pub fn hash_to_domain(&self, id: &[u8]) -> BigUint {
        let bytes = self.n.bits().div_ceil(8) as usize + 16;
        let mut out = Vec::with_capacity(bytes + 32);
        let mut block = 0u32;
        while out.len() < bytes {
            let mut h = Sha256::new();
            h.update(b"vflguard.rsa.fdh");
            h.update(block.to_be_bytes());
            h.update(id);
            out.extend_from_slice(&h.finalize());
            block += 1;
        }
        BigUint::from_bytes_be(&out[..bytes]) % &self.n
    }

    pub fn blind(&self, h: &BigUint, r: &BigUint) -> Result<BigUint, CryptoError> {
        if !r.gcd(&self.n).is_one() {
            return Err(CryptoError::NotInvertible);
        }
        Ok((h * r.modpow(&self.e, &self.n)) % &self.n)
    }

    /// Blinding factor and its inverse.
    pub fn blinding_factor<R: RngCore + ?Sized>(&self, rng: &mut R) -> (BigUint, BigUint) {
        let r = random_unit(rng, &self.n);
        let inv = r.modinv(&self.n).expect("unit is invertible");
        (r, inv)
    }

    pub fn unblind(&self, signed: &BigUint, r_inv: &BigUint) -> BigUint {
        (signed * r_inv) % &self.n
    }

    pub fn verify(&self, h: &BigUint, sig: &BigUint) -> bool {
        &sig.modpow(&self.e, &self.n) == h
    }
}

/// Digest of a signature, the value parties compare.
pub fn signature_digest(sig: &BigUint) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"vflguard.rsa.sig");
    h.update(sig.to_bytes_be());
    h.finalize().into()
}
