//! Products of powers `Π bᵢ^eᵢ mod m` with bucketed windows.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};

fn window_bits(n: usize) -> u32 {
    match n {
        0..=3 => 1,
        4..=15 => 3,
        16..=63 => 4,
        64..=255 => 5,
        256..=1023 => 6,
        1024..=4095 => 7,
        4096..=16383 => 8,
        _ => 9,
    }
}

fn digit(limbs: &[u64], bit: u64, width: u32) -> usize {
    let limb = (bit / 64) as usize;
    let off = bit % 64;
    if limb >= limbs.len() {
        return 0;
    }
    let mut v = limbs[limb] >> off;
    if off + width as u64 > 64 && limb + 1 < limbs.len() {
        v |= limbs[limb + 1] << (64 - off);
    }
    (v & ((1u64 << width) - 1)) as usize
}

fn mul_into(acc: &mut Option<BigUint>, x: &BigUint, m: &BigUint) {
    *acc = Some(match acc.take() {
        None => x.clone(),
        Some(a) => (a * x) % m,
    });
}

/// `Π bases[i]^exps[i] mod m`. Exponents are non-negative.
pub fn multi_exp(bases: &[BigUint], exps: &[BigUint], m: &BigUint) -> BigUint {
    assert_eq!(bases.len(), exps.len());
    let limbs: Vec<Vec<u64>> = exps.iter().map(|e| e.to_u64_digits()).collect();
    let max_bits = exps.iter().map(|e| e.bits()).max().unwrap_or(0);
    if max_bits == 0 {
        return BigUint::one() % m;
    }
    let active = limbs.iter().filter(|l| !l.is_empty()).count();
    let c = window_bits(active);
    let windows = max_bits.div_ceil(c as u64);
    let mut result: Option<BigUint> = None;
    let mut buckets: Vec<Option<BigUint>> = vec![None; 1 << c];
    for w in (0..windows).rev() {
        if let Some(r) = result.as_mut() {
            for _ in 0..c {
                *r = (&*r * &*r) % m;
            }
        }
        let bit = w * c as u64;
        for (base, l) in bases.iter().zip(&limbs) {
            let d = digit(l, bit, c);
            if d != 0 {
                mul_into(&mut buckets[d], base, m);
            }
        }
        // Σ d·bucket[d] via running products, highest digit first.
        let mut running: Option<BigUint> = None;
        let mut acc: Option<BigUint> = None;
        for slot in buckets.iter_mut().skip(1).rev() {
            if let Some(b) = slot.take() {
                mul_into(&mut running, &b, m);
            }
            if let Some(r) = &running {
                mul_into(&mut acc, r, m);
            }
        }
        if let Some(a) = acc {
            mul_into(&mut result, &a, m);
        }
    }
    result.unwrap_or_else(|| BigUint::one() % m)
}

/// Signed exponents: negative terms are accumulated separately and inverted
/// once. Every base must be invertible mod `m`.
pub fn multi_exp_signed(bases: &[BigUint], exps: &[BigInt], m: &BigUint) -> BigUint {
    let mut pos_b = Vec::new();
    let mut pos_e = Vec::new();
    let mut neg_b = Vec::new();
    let mut neg_e = Vec::new();
    for (b, e) in bases.iter().zip(exps) {
        match e.sign() {
            Sign::Plus => {
                pos_b.push(b.clone());
                pos_e.push(e.magnitude().clone());
            }
            Sign::Minus => {
                neg_b.push(b.clone());
                neg_e.push(e.magnitude().clone());
            }
            Sign::NoSign => {}
        }
    }
    let pos = multi_exp(&pos_b, &pos_e, m);
    if neg_b.is_empty() {
        return pos;
    }
    let neg = multi_exp(&neg_b, &neg_e, m);
    let inv = neg.modinv(m).expect("base not invertible");
    (pos * inv) % m
}

/// `b^e mod m` for signed `e`.
pub fn pow_signed(b: &BigUint, e: &BigInt, m: &BigUint) -> BigUint {
    let r = b.modpow(e.magnitude(), m);
    if e.sign() == Sign::Minus && !r.is_zero() {
        r.modinv(m).expect("base not invertible")
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_rng, prime::random_bits};
    use proptest::prelude::*;

    fn naive(bases: &[BigUint], exps: &[BigUint], m: &BigUint) -> BigUint {
        bases.iter().zip(exps).fold(BigUint::one() % m, |acc, (b, e)| (acc * b.modpow(e, m)) % m)
    }

    #[test]
    fn matches_naive_across_sizes() {
        let mut rng = derive_rng(&[4; 32], "multiexp").unwrap();
        let m = random_bits(&mut rng, 300) | BigUint::one();
        for n in [0usize, 1, 2, 5, 17, 70, 300, 1100] {
            let bases: Vec<BigUint> = (0..n).map(|_| random_bits(&mut rng, 299)).collect();
            let exps: Vec<BigUint> =
                (0..n).map(|i| random_bits(&mut rng, [0u64, 1, 20, 64, 65, 130][i % 6])).collect();
            assert_eq!(multi_exp(&bases, &exps, &m), naive(&bases, &exps, &m), "n={n}");
        }
    }

    #[test]
    fn signed_exponents() {
        let m = BigUint::from(1_000_003u32 * 7);
        let bases = vec![BigUint::from(3u8), BigUint::from(10u8), BigUint::from(12u8)];
        let exps = vec![BigInt::from(5), BigInt::from(-3), BigInt::from(0)];
        let inv10 = BigUint::from(10u8).modinv(&m).unwrap();
        let expected = (BigUint::from(243u32) * inv10.modpow(&BigUint::from(3u8), &m)) % &m;
        assert_eq!(multi_exp_signed(&bases, &exps, &m), expected);
        assert_eq!(pow_signed(&bases[1], &exps[1], &m), inv10.modpow(&BigUint::from(3u8), &m));
    }

    proptest! {
        #[test]
        fn agrees_with_naive(seed in any::<u64>(), n in 0usize..40) {
            let mut rng = derive_rng(&[0; 32], &format!("p{seed}")).unwrap();
            let m = random_bits(&mut rng, 128) | BigUint::one();
            let bases: Vec<BigUint> = (0..n).map(|_| random_bits(&mut rng, 127)).collect();
            let exps: Vec<BigUint> = (0..n).map(|_| random_bits(&mut rng, 40)).collect();
            prop_assert_eq!(multi_exp(&bases, &exps, &m), naive(&bases, &exps, &m));
        }
    }
}
