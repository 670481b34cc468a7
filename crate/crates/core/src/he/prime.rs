use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, RngCore};

const SMALL_PRIMES: [u32; 24] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// Uniform integer with at most `bits` bits.
pub(crate) fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    let n_bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; n_bytes];
    rng.fill_bytes(&mut buf);
    let excess = (n_bytes as u64) * 8 - bits;
    if excess > 0 {
        buf[0] &= 0xffu8 >> excess;
    }
    BigUint::from_bytes_be(&buf)
}

/// Uniform integer in `[1, bound)`.
pub(crate) fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    let bits = bound.bits();
    loop {
        let c = random_bits(rng, bits);
        if !c.is_zero() && &c < bound {
            return c;
        }
    }
}

pub(crate) fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }

    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    'witness: for _ in 0..rounds {
        // a in [2, n-2]
        let a = loop {
            let a = random_below(rng, &n_minus_one);
            if a >= two {
                break a;
            }
            if n_minus_one <= two {
                break two.clone();
            }
        };
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime of exactly `bits` bits with the top two bits set, so the
/// product of two such primes has exactly `2 * bits` bits.
pub(crate) fn random_prime<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    assert!(bits >= 3, "prime too small");
    loop {
        let mut c = random_bits(rng, bits);
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, 40, rng) {
            return c;
        }
        // keep the rng moving even on cheap rejections
        let _: u8 = rng.random();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn trial_division(n: u64) -> bool {
        if n < 2 {
            return false;
        }
        let mut i = 2;
        while i * i <= n {
            if n.is_multiple_of(i) {
                return false;
            }
            i += 1;
        }
        true
    }

    #[test]
    fn miller_rabin_agrees_with_trial_division() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for n in 0u64..5000 {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), 20, &mut rng),
                trial_division(n),
                "n = {n}"
            );
        }
    }

    #[test]
    fn carmichael_numbers_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for n in [561u64, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(n), 20, &mut rng));
        }
    }

    #[test]
    fn generated_primes_have_requested_size() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for bits in [8u64, 16, 32, 64] {
            let p = random_prime(&mut rng, bits);
            assert_eq!(p.bits(), bits);
            assert!(p.bit(bits - 2));
        }
        let p = random_prime(&mut rng, 16);
        let v: u64 = p.try_into().unwrap();
        assert!(trial_division(v));
    }
}
