use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FRAC_BITS: u32 = 16;
pub const DEFAULT_INT_BITS: u32 = 4;
pub const DEFAULT_CLIP_BOUND: f64 = 8.0;

/// Largest supported `frac_bits`; keeps doubly-scaled products exact in f64 rounding.
pub const MAX_FRAC_BITS: u32 = 48;

/// Fixed-point mapping between reals and the cipher's plaintext ring `Z_n`.
///
/// Values are clipped to `[-clip_bound, clip_bound]`, scaled by `2^frac_bits`
/// and rounded. Negatives wrap to the upper half of `Z_n`; anything at or
/// above `n / 2` decodes as negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub frac_bits: u32,
    pub int_bits: u32,
    pub clip_bound: f64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            frac_bits: DEFAULT_FRAC_BITS,
            int_bits: DEFAULT_INT_BITS,
            clip_bound: DEFAULT_CLIP_BOUND,
        }
    }
}

impl FixedPointCodec {
    pub fn new(frac_bits: u32, int_bits: u32, clip_bound: f64) -> Result<Self> {
        let codec = FixedPointCodec {
            frac_bits,
            int_bits,
            clip_bound,
        };
        codec.validate()?;
        Ok(codec)
    }

    pub fn with_frac_bits(frac_bits: u32) -> Self {
        FixedPointCodec {
            frac_bits,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound.is_finite() && self.clip_bound > 0.0) {
            return Err(Error::config("clip_bound", "must be a positive finite number"));
        }
        if self.frac_bits > MAX_FRAC_BITS {
            return Err(Error::config(
                "frac_bits",
                format!("at most {MAX_FRAC_BITS} supported"),
            ));
        }
        if self.int_bits > 30 {
            return Err(Error::config("int_bits", "at most 30 supported"));
        }
        if self.clip_bound > (1u64 << self.int_bits) as f64 {
            return Err(Error::config(
                "clip_bound",
                format!("{} exceeds 2^int_bits = {}", self.clip_bound, 1u64 << self.int_bits),
            ));
        }
        Ok(())
    }

    /// The quantization step, `2^-frac_bits`.
    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn clip(&self, x: f64) -> f64 {
        if x.is_nan() {
            return 0.0;
        }
        x.clamp(-self.clip_bound, self.clip_bound)
    }

    /// Signed integer before modular wraparound: `round(clip(x) * 2^frac_bits)`.
    pub fn quantize(&self, x: f64) -> i64 {
        (self.clip(x) * (self.frac_bits as f64).exp2()).round() as i64
    }

    /// Encode into `Z_modulus`.
    pub fn encode(&self, x: f64, modulus: &BigUint) -> BigUint {
        to_residue(&BigInt::from(self.quantize(x)), modulus)
    }

    pub fn decode(&self, m: &BigUint, modulus: &BigUint) -> f64 {
        decode_scaled(m, modulus, self.frac_bits)
    }

    /// Exponent `E` such that every aggregate this codec can produce over
    /// `max_clients` clients, including doubly-scaled hybrid terms, fits
    /// strictly below `2^E` in magnitude with one bit spare for the sign.
    pub fn headroom_bits(&self, max_clients: usize) -> u32 {
        2 * self.frac_bits + self.int_bits + ceil_log2(max_clients.max(1)) + 1
    }
}

pub(crate) fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// Map a signed integer into `Z_modulus`.
pub fn to_residue(v: &BigInt, modulus: &BigUint) -> BigUint {
    let m = BigInt::from_biguint(Sign::Plus, modulus.clone());
    let r = ((v % &m) + &m) % &m;
    r.to_biguint().expect("residue is non-negative")
}

/// Interpret `m` as signed (upper half negative).
pub fn to_signed(m: &BigUint, modulus: &BigUint) -> BigInt {
    let half = modulus >> 1u32;
    if m > &half {
        -BigInt::from_biguint(Sign::Plus, modulus - m)
    } else {
        BigInt::from_biguint(Sign::Plus, m.clone())
    }
}

/// Signed decode of a plaintext carrying `scale_bits` fractional bits.
pub fn decode_scaled(m: &BigUint, modulus: &BigUint, scale_bits: u32) -> f64 {
    let s = to_signed(m, modulus);
    if s.is_zero() {
        return 0.0;
    }
    let mag = s.abs().to_f64().unwrap_or(f64::INFINITY);
    let v = mag / (scale_bits as f64).exp2();
    if s.is_negative() {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn modulus() -> BigUint {
        // 2^61 - 1, prime, large enough for any codec here
        BigUint::from((1u64 << 61) - 1)
    }

    #[test]
    fn encode_examples() {
        let c = FixedPointCodec::with_frac_bits(16);
        assert_eq!(c.encode(1.5, &modulus()), BigUint::from(98304u32));
        assert_eq!(c.encode(0.0, &modulus()), BigUint::zero());
        assert_eq!(c.encode(-0.0, &modulus()), BigUint::zero());
    }

    #[test]
    fn negatives_wrap_to_upper_half() {
        let c = FixedPointCodec::with_frac_bits(16);
        let n = modulus();
        let e = c.encode(-1.0, &n);
        assert_eq!(e, &n - BigUint::from(65536u32));
        assert!(e > (&n >> 1u32));
        assert_eq!(c.decode(&e, &n), -1.0);
    }

    #[test]
    fn clipping_absorbs_out_of_range() {
        let c = FixedPointCodec::default();
        let n = modulus();
        assert_eq!(c.decode(&c.encode(1e9, &n), &n), 8.0);
        assert_eq!(c.decode(&c.encode(-1e9, &n), &n), -8.0);
        assert_eq!(c.decode(&c.encode(f64::NAN, &n), &n), 0.0);
    }

    #[test]
    fn round_trip_error_bounded_by_resolution() {
        // Oracle: exact rational error |round(x*2^f)/2^f - x| computed with
        // integers on the dyadic representation of x.
        let c = FixedPointCodec::default();
        let n = modulus();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-c.clip_bound..=c.clip_bound);
            let back = c.decode(&c.encode(x, &n), &n);
            // x = mant * 2^exp exactly; compare with back * 2^f as integer
            let scaled = x * 65536.0;
            let exact_err = (scaled - scaled.round()).abs() / 65536.0;
            assert!((back - x).abs() - exact_err <= f64::EPSILON);
            worst = worst.max((back - x).abs());
        }
        assert!(worst <= c.resolution());
    }

    #[test]
    fn encode_is_monotone() {
        let c = FixedPointCodec::default();
        let mut prev = i64::MIN;
        let mut x = -9.0;
        while x <= 9.0 {
            let q = c.quantize(x);
            assert!(q >= prev);
            prev = q;
            x += 0.001;
        }
    }

    #[test]
    fn headroom_exponent() {
        let c = FixedPointCodec::default();
        assert_eq!(c.headroom_bits(1), 2 * 16 + 4 + 1);
        assert_eq!(c.headroom_bits(8), 2 * 16 + 4 + 3 + 1);
        assert_eq!(c.headroom_bits(9), 2 * 16 + 4 + 4 + 1);
    }

    #[test]
    fn invalid_codecs_rejected() {
        assert!(FixedPointCodec::new(16, 2, 8.0).is_err());
        assert!(FixedPointCodec::new(16, 4, 0.0).is_err());
        assert!(FixedPointCodec::new(60, 4, 8.0).is_err());
        assert!(FixedPointCodec::new(16, 4, 8.0).is_ok());
    }
}
