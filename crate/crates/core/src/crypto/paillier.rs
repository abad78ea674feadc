//! Paillier encryption with `g = n + 1`.
//!
//! Encryption randomness is `r = r₀^α mod n` for a public unit `r₀` derived
//! from `n` and a secret 256-bit exponent `α` drawn from the caller's
//! [`SeededRng`]. `r^n = (r₀^n)^α` is then a fixed-base power, computed with
//! a precomputed comb table. [`PublicKey::encrypt_with_r`] is the textbook
//! form for arbitrary `r`.
//!
//! Holders of the factorization can evaluate products of powers modulo `p²`
//! and `q²` separately ([`Evaluator::Crt`]); results are bit-identical to the
//! public evaluator.

use super::multiexp::{multi_exp_signed, pow_signed};
use super::prime::{gen_prime, random_bits, random_unit};
use super::{CryptoError, SeededRng};
use crate::messages::{Reader, Writer};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use sha2::{Digest, Sha256};
use std::sync::{Arc, OnceLock};

pub const DEFAULT_MODULUS_BITS: u64 = 512;
const ALPHA_BITS: u64 = 256;
const COMB_WIDTH: u32 = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub value: BigUint,
    pub key_id: String,
}

struct Comb {
    /// `table[w][d] = h^(d · 2^(8w)) mod n²`
    table: Vec<Vec<BigUint>>,
}

#[derive(Clone)]
pub struct PublicKey {
    pub key_id: String,
    pub n: BigUint,
    pub n2: BigUint,
    comb: Arc<OnceLock<Comb>>,
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PublicKey").field("key_id", &self.key_id).field("bits", &self.n.bits()).finish()
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.key_id == other.key_id && self.n == other.n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecretKey {
    pub public: PublicKey,
    pub p: BigUint,
    pub q: BigUint,
    pub lambda: BigUint,
    pub mu: BigUint,
    p2: BigUint,
    q2: BigUint,
    /// (p²)⁻¹ mod q²
    p2_inv_q2: BigUint,
    hp: BigUint,
    hq: BigUint,
    /// p⁻¹ mod q
    p_inv_q: BigUint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaillierKeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
    pub modulus_bits: u64,
}

impl PublicKey {
    pub fn new(key_id: &str, n: BigUint) -> PublicKey {
        let n2 = &n * &n;
        PublicKey { key_id: key_id.to_string(), n, n2, comb: Arc::new(OnceLock::new()) }
    }

    pub fn modulus_bits(&self) -> u64 {
        self.n.bits()
    }

    fn comb(&self) -> &Comb {
        self.comb.get_or_init(|| {
            let h = self.nth_residue_base();
            let windows = ALPHA_BITS.div_ceil(COMB_WIDTH as u64) as usize;
            let mut table = Vec::with_capacity(windows);
            let mut base = h;
            for _ in 0..windows {
                let mut row = Vec::with_capacity(1 << COMB_WIDTH);
                row.push(BigUint::one());
                for d in 1..(1usize << COMB_WIDTH) {
                    let next = (&row[d - 1] * &base) % &self.n2;
                    row.push(next);
                }
                base = (&row[(1 << COMB_WIDTH) - 1] * &base) % &self.n2;
                table.push(row);
            }
            Comb { table }
        })
    }

    /// Public unit `r₀` derived from `n`; `h = r₀^n mod n²`.
    fn nth_residue_base(&self) -> BigUint {
        let bytes = self.n.bits().div_ceil(8) as usize + 16;
        let mut counter = 0u32;
        loop {
            let mut out = Vec::with_capacity(bytes + 32);
            let mut block = 0u32;
            while out.len() < bytes {
                let mut h = Sha256::new();
                h.update(b"vflguard.paillier.r0");
                h.update(self.n.to_bytes_be());
                h.update(counter.to_be_bytes());
                h.update(block.to_be_bytes());
                out.extend_from_slice(&h.finalize());
                block += 1;
            }
            let r0 = BigUint::from_bytes_be(&out[..bytes]) % &self.n;
            if r0 > BigUint::one() && r0.gcd(&self.n).is_one() {
                return r0.modpow(&self.n, &self.n2);
            }
            counter += 1;
        }
    }

    fn check_plaintext(&self, m: &BigUint) -> Result<(), CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        Ok(())
    }

    /// `g^m = 1 + m·n mod n²`
    fn g_pow(&self, m: &BigUint) -> BigUint {
        (BigUint::one() + m * &self.n) % &self.n2
    }

    pub fn encrypt(&self, m: &BigUint, rng: &mut SeededRng) -> Result<Ciphertext, CryptoError> {
        Ok(self.encrypt_traced(m, rng)?.0)
    }

    /// [`PublicKey::encrypt`] that also hands back the exponent `α`.
    pub fn encrypt_traced(&self, m: &BigUint, rng: &mut SeededRng) -> Result<(Ciphertext, BigUint), CryptoError> {
        self.check_plaintext(m)?;
        let alpha = random_bits(rng, ALPHA_BITS);
        let limbs = alpha.to_u64_digits();
        let comb = self.comb();
        let mut acc = self.g_pow(m);
        for (w, row) in comb.table.iter().enumerate() {
            let bit = w as u64 * COMB_WIDTH as u64;
            let limb = (bit / 64) as usize;
            let d = limbs.get(limb).map_or(0, |l| (l >> (bit % 64)) & 0xff) as usize;
            if d != 0 {
                acc = (acc * &row[d]) % &self.n2;
            }
        }
        Ok((Ciphertext { value: acc, key_id: self.key_id.clone() }, alpha))
    }

    /// `h = r₀^n mod n²`, the base every fresh ciphertext's randomness is a power of.
    pub fn residue_base(&self) -> &BigUint {
        &self.comb().table[0][1]
    }

    pub fn encrypt_with_r(&self, m: &BigUint, r: &BigUint) -> Result<Ciphertext, CryptoError> {
        self.check_plaintext(m)?;
        if !r.gcd(&self.n).is_one() {
            return Err(CryptoError::NotInvertible);
        }
        let value = (self.g_pow(m) * r.modpow(&self.n, &self.n2)) % &self.n2;
        Ok(Ciphertext { value, key_id: self.key_id.clone() })
    }

    /// Textbook encryption with OS-independent randomness drawn from `rng`.
    pub fn encrypt_textbook(&self, m: &BigUint, rng: &mut SeededRng) -> Result<Ciphertext, CryptoError> {
        let r = random_unit(rng, &self.n);
        self.encrypt_with_r(m, &r)
    }

    fn same_key(&self, c: &Ciphertext) -> Result<(), CryptoError> {
        if c.key_id != self.key_id {
            return Err(CryptoError::KeyMismatch { expected: self.key_id.clone(), found: c.key_id.clone() });
        }
        Ok(())
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CryptoError> {
        self.same_key(a)?;
        self.same_key(b)?;
        Ok(Ciphertext { value: (&a.value * &b.value) % &self.n2, key_id: self.key_id.clone() })
    }

    /// `Enc(m + k)` without fresh randomness.
    pub fn add_plain(&self, a: &Ciphertext, k: &BigUint) -> Result<Ciphertext, CryptoError> {
        self.same_key(a)?;
        self.check_plaintext(k)?;
        Ok(Ciphertext { value: (&a.value * self.g_pow(k)) % &self.n2, key_id: self.key_id.clone() })
    }

    pub fn scale(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, CryptoError> {
        self.same_key(c)?;
        Ok(Ciphertext { value: c.value.modpow(k, &self.n2), key_id: self.key_id.clone() })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.key_id).bytes(&self.n.to_bytes_be());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<PublicKey, CryptoError> {
        let mut r = Reader::new(bytes);
        let key_id = r.str("key_id").map_err(|_| CryptoError::Malformed("paillier public key"))?;
        let n = BigUint::from_bytes_be(r.bytes().map_err(|_| CryptoError::Malformed("paillier public key"))?);
        r.finish().map_err(|_| CryptoError::Malformed("paillier public key"))?;
        Ok(PublicKey::new(&key_id, n))
    }
}

fn l_fn(x: &BigUint, d: &BigUint) -> BigUint {
    (x - 1u8) / d
}

impl SecretKey {
    pub fn from_primes(key_id: &str, p: BigUint, q: BigUint) -> Result<SecretKey, CryptoError> {
        if p == q {
            return Err(CryptoError::Malformed("paillier primes must be distinct"));
        }
        let n = &p * &q;
        let public = PublicKey::new(key_id, n.clone());
        let p1 = &p - 1u8;
        let q1 = &q - 1u8;
        let lambda = p1.lcm(&q1);
        let g = &n + 1u8;
        let mu = l_fn(&g.modpow(&lambda, &public.n2), &n).modinv(&n).ok_or(CryptoError::NotInvertible)?;
        let p2 = &p * &p;
        let q2 = &q * &q;
        let p2_inv_q2 = p2.modinv(&q2).ok_or(CryptoError::NotInvertible)?;
        let hp = l_fn(&g.modpow(&p1, &p2), &p).modinv(&p).ok_or(CryptoError::NotInvertible)?;
        let hq = l_fn(&g.modpow(&q1, &q2), &q).modinv(&q).ok_or(CryptoError::NotInvertible)?;
        let p_inv_q = p.modinv(&q).ok_or(CryptoError::NotInvertible)?;
        Ok(SecretKey { public, p, q, lambda, mu, p2, q2, p2_inv_q2, hp, hq, p_inv_q })
    }

    fn check(&self, c: &Ciphertext) -> Result<(), CryptoError> {
        self.public.same_key(c)?;
        if c.value >= self.public.n2 {
            return Err(CryptoError::CiphertextOutOfRange);
        }
        Ok(())
    }

    /// CRT decryption.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, CryptoError> {
        self.check(c)?;
        let mp = (l_fn(&(&c.value % &self.p2).modpow(&(&self.p - 1u8), &self.p2), &self.p) * &self.hp) % &self.p;
        let mq = (l_fn(&(&c.value % &self.q2).modpow(&(&self.q - 1u8), &self.q2), &self.q) * &self.hq) % &self.q;
        // m = mp + p·((mq − mp)·p⁻¹ mod q)
        let diff = (&mq + &self.q - (&mp % &self.q)) % &self.q;
        Ok(&mp + &self.p * ((diff * &self.p_inv_q) % &self.q))
    }

    /// `L(c^λ mod n²)·μ mod n`, kept as an independent route for tests.
    pub fn decrypt_textbook(&self, c: &Ciphertext) -> Result<BigUint, CryptoError> {
        self.check(c)?;
        let n = &self.public.n;
        Ok((l_fn(&c.value.modpow(&self.lambda, &self.public.n2), n) * &self.mu) % n)
    }

    fn crt_combine(&self, rp: &BigUint, rq: &BigUint) -> BigUint {
        let rp_mod_q2 = rp % &self.q2;
        let diff = (rq + &self.q2 - rp_mod_q2) % &self.q2;
        rp + &self.p2 * ((diff * &self.p2_inv_q2) % &self.q2)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.public.key_id).bytes(&self.p.to_bytes_be()).bytes(&self.q.to_bytes_be());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<SecretKey, CryptoError> {
        let bad = |_| CryptoError::Malformed("paillier secret key");
        let mut r = Reader::new(bytes);
        let key_id = r.str("key_id").map_err(bad)?;
        let p = BigUint::from_bytes_be(r.bytes().map_err(bad)?);
        let q = BigUint::from_bytes_be(r.bytes().map_err(bad)?);
        r.finish().map_err(bad)?;
        SecretKey::from_primes(&key_id, p, q)
    }
}

impl PaillierKeyPair {
    pub fn generate<R: RngCore + ?Sized>(key_id: &str, modulus_bits: u64, rng: &mut R) -> PaillierKeyPair {
        assert!(modulus_bits >= 64 && modulus_bits % 2 == 0, "unsupported modulus size {modulus_bits}");
        loop {
            let p = gen_prime(rng, modulus_bits / 2);
            let q = gen_prime(rng, modulus_bits / 2);
            if let Ok(secret) = SecretKey::from_primes(key_id, p, q) {
                return PaillierKeyPair { public: secret.public.clone(), secret, modulus_bits };
            }
        }
    }
}

/// Exponent bookkeeping for ciphertexts created in this process. Every fresh
/// ciphertext is `(1+n)^m · h^α`, and products of powers stay in that form,
/// so whoever made all the inputs can evaluate a dot product with one
/// exponentiation instead of a multi-exponentiation. Used by replay, which
/// runs both parties and so creates every ciphertext itself.
#[derive(Default)]
pub struct Shadow {
    map: std::sync::Mutex<std::collections::HashMap<BigUint, (BigUint, BigInt)>>,
}

impl Shadow {
    pub fn new() -> Shadow {
        Shadow::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, c: &BigUint, m: BigUint, a: BigInt) {
        self.map.lock().unwrap().insert(c.clone(), (m, a));
    }

    fn get(&self, c: &BigUint) -> Option<(BigUint, BigInt)> {
        self.map.lock().unwrap().get(c).cloned()
    }

    fn get_all(&self, cs: &[BigUint]) -> Option<Vec<(BigUint, BigInt)>> {
        let map = self.map.lock().unwrap();
        cs.iter().map(|c| map.get(c).cloned()).collect()
    }
}

/// Homomorphic evaluation strategy.
pub enum Evaluator<'a> {
    Public(&'a PublicKey),
    /// Same results, computed modulo p² and q² separately.
    Crt(&'a SecretKey),
    /// Same results again, from tracked exponents where every input is
    /// known to the shadow; falls back to CRT otherwise.
    Shadowed(&'a SecretKey, &'a Shadow),
}

fn signed_mod(v: &BigInt, n: &BigUint) -> BigUint {
    let n = BigInt::from(n.clone());
    v.mod_floor(&n).magnitude().clone()
}

impl Evaluator<'_> {
    pub fn public(&self) -> &PublicKey {
        match self {
            Evaluator::Public(pk) => pk,
            Evaluator::Crt(sk) | Evaluator::Shadowed(sk, _) => &sk.public,
        }
    }

    pub fn secret(&self) -> Option<&SecretKey> {
        match self {
            Evaluator::Public(_) => None,
            Evaluator::Crt(sk) | Evaluator::Shadowed(sk, _) => Some(sk),
        }
    }

    /// `(1+n)^m · h^a mod n²`
    fn compose(sk: &SecretKey, m: &BigUint, a: &BigInt) -> BigUint {
        let pk = &sk.public;
        let h = pk.residue_base();
        let rp = pow_signed(&(h % &sk.p2), a, &sk.p2);
        let rq = pow_signed(&(h % &sk.q2), a, &sk.q2);
        (pk.g_pow(m) * sk.crt_combine(&rp, &rq)) % &pk.n2
    }

    pub fn encrypt(&self, m: &BigUint, rng: &mut SeededRng) -> Result<BigUint, CryptoError> {
        let (c, alpha) = self.public().encrypt_traced(m, rng)?;
        if let Evaluator::Shadowed(_, sh) = self {
            sh.record(&c.value, m.clone(), BigInt::from(alpha));
        }
        Ok(c.value)
    }

    /// Plaintext residue; `None` without the secret key.
    pub fn decrypt(&self, c: &BigUint) -> Option<Result<BigUint, CryptoError>> {
        let sk = self.secret()?;
        if let Evaluator::Shadowed(_, sh) = self {
            if let Some((m, _)) = sh.get(c) {
                return Some(Ok(m));
            }
        }
        Some(sk.decrypt(&Ciphertext { value: c.clone(), key_id: sk.public.key_id.clone() }))
    }

    /// `Enc(Σ kᵢ·mᵢ)` from `Enc(mᵢ)` and signed plaintext scalars.
    pub fn dot(&self, cts: &[BigUint], scalars: &[BigInt]) -> BigUint {
        match self {
            Evaluator::Public(pk) => multi_exp_signed(cts, scalars, &pk.n2),
            Evaluator::Crt(sk) => {
                let bp: Vec<BigUint> = cts.iter().map(|c| c % &sk.p2).collect();
                let bq: Vec<BigUint> = cts.iter().map(|c| c % &sk.q2).collect();
                let rp = multi_exp_signed(&bp, scalars, &sk.p2);
                let rq = multi_exp_signed(&bq, scalars, &sk.q2);
                sk.crt_combine(&rp, &rq)
            }
            Evaluator::Shadowed(sk, sh) => match sh.get_all(cts) {
                Some(known) => {
                    let mut m = BigInt::zero();
                    let mut a = BigInt::zero();
                    for ((mi, ai), k) in known.iter().zip(scalars) {
                        if k.is_zero() {
                            continue;
                        }
                        m += k * BigInt::from(mi.clone());
                        a += k * ai;
                    }
                    let m = signed_mod(&m, &sk.public.n);
                    let c = Self::compose(sk, &m, &a);
                    sh.record(&c, m, a);
                    c
                }
                None => Evaluator::Crt(sk).dot(cts, scalars),
            },
        }
    }

    /// `Enc(k·m)` for signed `k`.
    pub fn scale_signed(&self, c: &BigUint, k: &BigInt) -> BigUint {
        match self {
            Evaluator::Public(pk) => pow_signed(c, k, &pk.n2),
            Evaluator::Crt(sk) => {
                let rp = pow_signed(&(c % &sk.p2), k, &sk.p2);
                let rq = pow_signed(&(c % &sk.q2), k, &sk.q2);
                sk.crt_combine(&rp, &rq)
            }
            Evaluator::Shadowed(..) => self.dot(std::slice::from_ref(c), std::slice::from_ref(k)),
        }
    }

    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        let v = (a * b) % &self.public().n2;
        if let Evaluator::Shadowed(sk, sh) = self {
            if let (Some((ma, aa)), Some((mb, ab))) = (sh.get(a), sh.get(b)) {
                sh.record(&v, (ma + mb) % &sk.public.n, aa + ab);
            }
        }
        v
    }

    /// `c · g^k` for signed `k`, no fresh randomness.
    pub fn add_plain(&self, c: &BigUint, k: &BigInt) -> BigUint {
        let pk = self.public();
        let kr = signed_mod(k, &pk.n);
        let v = (c * pk.g_pow(&kr)) % &pk.n2;
        if let Evaluator::Shadowed(_, sh) = self {
            if let Some((m, a)) = sh.get(c) {
                sh.record(&v, (m + kr) % &pk.n, a);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_rng, prime::random_below};

    pub(crate) fn keypair() -> PaillierKeyPair {
        let mut rng = derive_rng(&[9; 32], "paillier.test.keygen").unwrap();
        PaillierKeyPair::generate("k1", 256, &mut rng)
    }

    #[test]
    fn zero_round_trip() {
        let kp = keypair();
        let mut rng = derive_rng(&[1; 32], "enc").unwrap();
        let c = kp.public.encrypt(&BigUint::from(0u8), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(0u8));
    }

    #[test]
    fn both_decryptions_agree() {
        let kp = keypair();
        let mut rng = derive_rng(&[1; 32], "enc").unwrap();
        for _ in 0..50 {
            let m = random_below(&mut rng, &kp.public.n);
            let c = kp.public.encrypt(&m, &mut rng).unwrap();
            assert_eq!(kp.secret.decrypt(&c).unwrap(), m);
            assert_eq!(kp.secret.decrypt_textbook(&c).unwrap(), m);
            let c2 = kp.public.encrypt_textbook(&m, &mut rng).unwrap();
            assert_eq!(kp.secret.decrypt(&c2).unwrap(), m);
        }
    }

    #[test]
    fn homomorphism_random_trials() {
        let kp = keypair();
        let pk = &kp.public;
        let mut rng = derive_rng(&[8; 32], "hom").unwrap();
        for _ in 0..1000 {
            let a = random_below(&mut rng, &pk.n);
            let b = random_below(&mut rng, &pk.n);
            let k = random_below(&mut rng, &pk.n);
            let ca = pk.encrypt(&a, &mut rng).unwrap();
            let cb = pk.encrypt(&b, &mut rng).unwrap();
            assert_eq!(kp.secret.decrypt(&pk.add(&ca, &cb).unwrap()).unwrap(), (&a + &b) % &pk.n);
            assert_eq!(kp.secret.decrypt(&pk.scale(&ca, &k).unwrap()).unwrap(), (&a * &k) % &pk.n);
        }
    }

    #[test]
    fn encryption_is_deterministic_per_stream() {
        let kp = keypair();
        let m = BigUint::from(42u8);
        let a = kp.public.encrypt(&m, &mut derive_rng(&[5; 32], "s0").unwrap()).unwrap();
        let b = kp.public.encrypt(&m, &mut derive_rng(&[5; 32], "s0").unwrap()).unwrap();
        assert_eq!(a, b);
        let c = kp.public.encrypt(&m, &mut derive_rng(&[5; 32], "s1").unwrap()).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn scale_then_add() {
        let kp = keypair();
        let mut rng = derive_rng(&[2; 32], "enc").unwrap();
        let pk = &kp.public;
        let c3 = pk.encrypt(&BigUint::from(3u8), &mut rng).unwrap();
        let c7 = pk.encrypt(&BigUint::from(7u8), &mut rng).unwrap();
        let out = pk.add(&pk.scale(&c3, &BigUint::from(5u8)).unwrap(), &c7).unwrap();
        assert_eq!(kp.secret.decrypt(&out).unwrap(), BigUint::from(22u8));
        let x = pk.encrypt(&BigUint::from(99u8), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt(&pk.scale(&x, &BigUint::one()).unwrap()).unwrap(), BigUint::from(99u8));
        let z = pk.encrypt(&BigUint::from(0u8), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt(&pk.add(&x, &z).unwrap()).unwrap(), BigUint::from(99u8));
    }

    #[test]
    fn key_mismatch_and_range_errors() {
        let kp = keypair();
        let mut rng = derive_rng(&[2; 32], "enc").unwrap();
        let mut c = kp.public.encrypt(&BigUint::from(1u8), &mut rng).unwrap();
        assert_eq!(kp.public.encrypt(&kp.public.n, &mut rng).unwrap_err(), CryptoError::PlaintextOutOfRange);
        c.key_id = "other".into();
        assert!(matches!(kp.public.add(&c, &c), Err(CryptoError::KeyMismatch { .. })));
        let big = Ciphertext { value: kp.public.n2.clone(), key_id: "k1".into() };
        assert_eq!(kp.secret.decrypt(&big).unwrap_err(), CryptoError::CiphertextOutOfRange);
    }

    #[test]
    fn crt_evaluator_matches_public() {
        let kp = keypair();
        let mut rng = derive_rng(&[3; 32], "enc").unwrap();
        let cts: Vec<BigUint> =
            (0..40u32).map(|i| kp.public.encrypt(&BigUint::from(i), &mut rng).unwrap().value).collect();
        let ks: Vec<BigInt> = (0..40i64).map(|i| BigInt::from((i - 20) * 1_000_003)).collect();
        let a = Evaluator::Public(&kp.public).dot(&cts, &ks);
        let b = Evaluator::Crt(&kp.secret).dot(&cts, &ks);
        assert_eq!(a, b);
        let expected: i64 = (0..40i64).map(|i| i * (i - 20) * 1_000_003).sum();
        let m = kp.secret.decrypt(&Ciphertext { value: a, key_id: "k1".into() }).unwrap();
        let signed = crate::crypto::fixed::residue_to_mantissa(&m, &kp.public.n);
        assert_eq!(signed, BigInt::from(expected));
        let k = BigInt::from(-12345);
        assert_eq!(
            Evaluator::Public(&kp.public).scale_signed(&cts[7], &k),
            Evaluator::Crt(&kp.secret).scale_signed(&cts[7], &k)
        );
    }

    #[test]
    fn key_serialization_round_trip() {
        let kp = keypair();
        assert_eq!(PublicKey::decode(&kp.public.encode()).unwrap(), kp.public);
        assert_eq!(SecretKey::decode(&kp.secret.encode()).unwrap(), kp.secret);
    }

    #[test]
    fn shadow_matches_public_bit_for_bit() {
        let kp = keypair();
        let pk = &kp.public;
        let sh = Shadow::new();
        let ev = Evaluator::Shadowed(&kp.secret, &sh);
        let mut rng = derive_rng(&[6; 32], "shadow").unwrap();
        let a: Vec<BigUint> = (0..40).map(|_| ev.encrypt(&random_below(&mut rng, &pk.n), &mut rng).unwrap()).collect();
        let b: Vec<BigUint> = (0..40).map(|_| ev.encrypt(&random_below(&mut rng, &pk.n), &mut rng).unwrap()).collect();
        // Replaying the same draws through the public path gives the same ciphertexts.
        let mut rng2 = derive_rng(&[6; 32], "shadow").unwrap();
        for c in &a {
            let m = random_below(&mut rng2, &pk.n);
            assert_eq!(&pk.encrypt(&m, &mut rng2).unwrap().value, c);
        }
        let prods: Vec<BigUint> = a.iter().zip(&b).map(|(x, y)| ev.mul(x, y)).collect();
        let public = Evaluator::Public(pk);
        let crt = Evaluator::Crt(&kp.secret);
        for trial in 0..20i64 {
            let ks: Vec<BigInt> = (0..40i64).map(|i| BigInt::from((i * 7919 + trial * 104729) % 2001 - 1000) << (trial as usize % 5)).collect();
            let want = public.dot(&prods, &ks);
            let got = ev.dot(&prods, &ks);
            assert_eq!(got, want);
            let shifted = ev.add_plain(&got, &BigInt::from(-trial));
            assert_eq!(shifted, public.add_plain(&want, &BigInt::from(-trial)));
            assert_eq!(ev.decrypt(&shifted).unwrap().unwrap(), crt.decrypt(&shifted).unwrap().unwrap());
            let sc = ev.scale_signed(&shifted, &BigInt::from(trial - 10));
            assert_eq!(sc, public.scale_signed(&shifted, &BigInt::from(trial - 10)));
        }
        assert!(sh.len() > 80);
        // Unknown inputs fall back to the CRT path.
        let foreign = crt.mul(&a[0], &a[0]);
        let stranger = (&foreign * &foreign) % &pk.n2;
        assert_eq!(ev.dot(&[stranger.clone()], &[BigInt::from(3)]), public.dot(&[stranger], &[BigInt::from(3)]));
    }
}
