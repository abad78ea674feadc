use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, ToPrimitive};

/// Default scale: values are carried as `round(x · 2^32)`.
pub const FRAC_BITS: u32 = 32;

/// Signed fixed-point number `mantissa · 2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPoint {
    pub mantissa: i128,
    pub frac_bits: u32,
}

impl FixedPoint {
    pub fn encode(x: f64) -> FixedPoint {
        FixedPoint::encode_with(x, FRAC_BITS)
    }

    pub fn encode_with(x: f64, frac_bits: u32) -> FixedPoint {
        assert!(x.is_finite(), "cannot encode {x}");
        let scaled = x * (frac_bits as f64).exp2();
        assert!(scaled.abs() < 2f64.powi(126), "{x} overflows 2^-{frac_bits} fixed point");
        FixedPoint { mantissa: scaled.round() as i128, frac_bits }
    }

    pub fn decode(&self) -> f64 {
        self.mantissa as f64 / (self.frac_bits as f64).exp2()
    }

    /// Maps into `Z_n`; negatives land in the upper half.
    pub fn to_residue(&self, n: &BigUint) -> BigUint {
        mantissa_to_residue(&BigInt::from(self.mantissa), n)
    }
}

pub fn mantissa_to_residue(m: &BigInt, n: &BigUint) -> BigUint {
    let magnitude = m.magnitude() % n;
    if m.sign() == Sign::Minus && magnitude.bits() > 0 {
        n - magnitude
    } else {
        magnitude
    }
}

/// Inverse of [`mantissa_to_residue`]: residues above `n/2` are negative.
pub fn residue_to_mantissa(v: &BigUint, n: &BigUint) -> BigInt {
    let half = n >> 1;
    if v > &half {
        -BigInt::from(n - v)
    } else {
        BigInt::from(v.clone())
    }
}

/// Decodes a residue carrying `mantissa · 2^-frac_bits`.
pub fn residue_to_f64(v: &BigUint, n: &BigUint, frac_bits: u32) -> f64 {
    let m = residue_to_mantissa(v, n);
    big_to_f64(&m, frac_bits)
}

/// `m · 2^-frac_bits` as f64, shifting before conversion so large mantissas
/// keep their significant bits.
pub fn big_to_f64(m: &BigInt, frac_bits: u32) -> f64 {
    let bits = m.bits();
    if bits <= 1000 {
        let shift = bits.saturating_sub(60);
        let shifted: BigInt = m.abs() >> shift;
        let v = shifted.to_f64().unwrap() * 2f64.powi(shift as i32 - frac_bits as i32);
        if m.is_negative() {
            -v
        } else {
            v
        }
    } else {
        f64::INFINITY.copysign(if m.is_negative() { -1.0 } else { 1.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::derive_rng;
    use rand::Rng;

    #[test]
    fn round_trip_error_bound() {
        let n = BigUint::from(1u8) << 511usize;
        let n = n + 187u32;
        let mut rng = derive_rng(&[3; 32], "fixed").unwrap();
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-1000.0..1000.0);
            let r = FixedPoint::encode(x).to_residue(&n);
            let back = residue_to_f64(&r, &n, FRAC_BITS);
            assert!((back - x).abs() < 2f64.powi(-30), "{x} -> {back}");
        }
    }

    #[test]
    fn negatives_in_upper_half() {
        let n = BigUint::from(1_000_003u32);
        let r = FixedPoint { mantissa: -5, frac_bits: 0 }.to_residue(&n);
        assert_eq!(r, BigUint::from(999_998u32));
        assert_eq!(residue_to_mantissa(&r, &n), BigInt::from(-5));
        assert_eq!(FixedPoint { mantissa: 0, frac_bits: 0 }.to_residue(&n), BigUint::from(0u8));
    }

    #[test]
    fn large_mantissa_conversion() {
        let m = BigInt::from(3) << 90usize;
        assert_eq!(big_to_f64(&m, 90), 3.0);
        assert_eq!(big_to_f64(&-m, 91), -1.5);
    }
}
