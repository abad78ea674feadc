//! Small helpers over the Paillier primitives used by both trainers.

use super::PartyError;
use crate::crypto::fixed::{mantissa_to_residue, residue_to_f64, residue_to_mantissa};
use crate::crypto::{Evaluator, PublicKey, SeededRng};
use crate::messages::Payload;
use num_bigint::{BigInt, BigUint};

/// Mantissa of `x · 2^frac_bits`, rounded.
pub fn mantissa(x: f64, frac_bits: u32) -> BigInt {
    let scaled = x * (frac_bits as f64).exp2();
    assert!(scaled.is_finite(), "cannot encode {x}");
    if scaled.abs() < 9.0e15 {
        BigInt::from(scaled.round() as i64)
    } else {
        // Past 2^53 every f64 is already an integer.
        BigInt::from(scaled as i128)
    }
}

pub fn encrypt_all(ev: &Evaluator, ms: &[BigInt], rng: &mut SeededRng) -> Result<Vec<BigUint>, PartyError> {
    let n = &ev.public().n;
    ms.iter().map(|m| Ok(ev.encrypt(&mantissa_to_residue(m, n), rng)?)).collect()
}

fn decrypt_residue(ev: &Evaluator, c: &BigUint) -> Result<BigUint, PartyError> {
    Ok(ev.decrypt(c).ok_or_else(|| PartyError::Protocol("no secret key to decrypt with".into()))??)
}

pub fn decrypt_mantissa(ev: &Evaluator, c: &BigUint) -> Result<BigInt, PartyError> {
    Ok(residue_to_mantissa(&decrypt_residue(ev, c)?, &ev.public().n))
}

pub fn decrypt_f64(ev: &Evaluator, c: &BigUint, frac_bits: u32) -> Result<f64, PartyError> {
    Ok(residue_to_f64(&decrypt_residue(ev, c)?, &ev.public().n, frac_bits))
}

/// `c · g^k` for a signed mantissa `k`, no fresh randomness.
pub fn add_plain(pk: &PublicKey, c: &BigUint, k: &BigInt) -> BigUint {
    let g_k = (BigUint::from(1u8) + mantissa_to_residue(k, &pk.n) * &pk.n) % &pk.n2;
    (c * g_k) % &pk.n2
}

pub fn cts(pk: &PublicKey, values: Vec<BigUint>) -> Payload {
    Payload::CiphertextVector { key_id: pk.key_id.clone(), values }
}

/// Unpacks a ciphertext vector under `pk`, checking key and length.
pub fn expect_cts(p: Payload, pk: &PublicKey, len: Option<usize>, what: &str) -> Result<Vec<BigUint>, PartyError> {
    match p {
        Payload::CiphertextVector { key_id, values } => {
            if key_id != pk.key_id {
                return Err(PartyError::Protocol(format!("{what}: ciphertexts under {key_id}")));
            }
            if let Some(len) = len.filter(|&l| l != values.len()) {
                return Err(PartyError::Protocol(format!("{what}: {} values, expected {len}", values.len())));
            }
            if values.iter().any(|v| v >= &pk.n2) {
                return Err(PartyError::Protocol(format!("{what}: ciphertext out of range")));
            }
            Ok(values)
        }
        other => Err(PartyError::Protocol(format!("{what}: expected ciphertexts, got {}", other.kind()))),
    }
}

pub fn expect_floats(p: Payload, len: usize, what: &str) -> Result<Vec<f64>, PartyError> {
    match p {
        Payload::PlainFloatVector(v) if v.len() == len => Ok(v),
        Payload::PlainFloatVector(v) => Err(PartyError::Protocol(format!("{what}: {} values, expected {len}", v.len()))),
        other => Err(PartyError::Protocol(format!("{what}: expected floats, got {}", other.kind()))),
    }
}

/// Features on the 2^-16 grid as exact integers, column-major.
pub fn int_columns(rows: &[Vec<f64>], dim: usize) -> Vec<Vec<BigInt>> {
    (0..dim).map(|j| rows.iter().map(|r| mantissa(r[j], super::dataset::FEATURE_FRAC_BITS)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_rng, Evaluator, PaillierKeyPair};

    #[test]
    fn signed_round_trip_and_dot() {
        let mut rng = derive_rng(&[3; 32], "he.test").unwrap();
        let kp = PaillierKeyPair::generate("k", 256, &mut rng);
        let xs = [1.5, -2.25, 0.0, 3.0];
        let ms: Vec<BigInt> = xs.iter().map(|x| mantissa(*x, 32)).collect();
        let c = encrypt_all(&Evaluator::Public(&kp.public), &ms, &mut rng).unwrap();
        let dec = Evaluator::Crt(&kp.secret);
        for (ci, x) in c.iter().zip(xs) {
            assert_eq!(decrypt_f64(&dec, ci, 32).unwrap(), x);
        }
        let w: Vec<BigInt> = [2i64, -1, 7, 1].iter().map(|&v| BigInt::from(v)).collect();
        for ev in [Evaluator::Public(&kp.public), Evaluator::Crt(&kp.secret)] {
            let d = ev.dot(&c, &w);
            assert_eq!(decrypt_f64(&dec, &d, 32).unwrap(), 3.0 + 2.25 + 3.0);
        }
        let shifted = add_plain(&kp.public, &c[1], &mantissa(-1.0, 32));
        assert_eq!(decrypt_f64(&dec, &shifted, 32).unwrap(), -3.25);
    }
}
