//! Paillier-style additively homomorphic cipher over `Z_n`.
//!
//! Uses the `g = n + 1` variant: `E(m) = (1 + m n) r^n mod n^2` and
//! `D(c) = L(c^phi mod n^2) * phi^-1 mod n` with `L(u) = (u - 1) / n`.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::codec::FixedPointCodec;
use super::prime::{random_below, random_prime};
use crate::error::{Error, Result};

/// Smallest accepted modulus size. Toy territory, tests only.
pub const MIN_SECURITY_BITS: u32 = 16;

/// Moduli below this size are flagged as not cryptographically strong.
pub const STRONG_SECURITY_BITS: u32 = 2048;

pub const TOY_KEY_WARNING: &str =
    "toy key size: NOT cryptographically strong, for simulation only";

pub const KEY_DOC_VERSION: u32 = 1;

/// What the plaintext space must hold: aggregates of `max_clients` updates
/// encoded with `codec`, including the doubly-scaled hybrid terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Headroom {
    pub codec: FixedPointCodec,
    pub max_clients: usize,
}

impl Headroom {
    pub fn new(codec: FixedPointCodec, max_clients: usize) -> Self {
        Headroom { codec, max_clients }
    }

    /// No aggregation requirement; only the round-trip has to work.
    pub fn none() -> Option<Self> {
        None
    }

    pub fn required_bits(&self) -> u32 {
        self.codec.headroom_bits(self.max_clients)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    security_bits: u32,
    key_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    phi: BigUint,
    mu: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_id: u64,
}

fn key_id_of(n: &BigUint) -> u64 {
    let digest = Sha256::digest(n.to_bytes_be());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl KeyPair {
    /// Generate a key whose modulus has exactly `security_bits` bits.
    ///
    /// With a `headroom` requirement the modulus must exceed
    /// `2^headroom.required_bits()`, otherwise generation is refused before any
    /// primes are drawn.
    pub fn generate<R: RngCore + ?Sized>(
        security_bits: u32,
        headroom: Option<Headroom>,
        rng: &mut R,
    ) -> Result<KeyPair> {
        if security_bits < MIN_SECURITY_BITS {
            return Err(Error::config(
                "security_bits",
                format!("must be at least {MIN_SECURITY_BITS}, got {security_bits}"),
            ));
        }
        // both primes carry their top two bits, so n > 2^(security_bits - 1)
        let available_bits = security_bits - 1;
        if let Some(h) = headroom {
            h.codec.validate()?;
            let required_bits = h.required_bits();
            if available_bits < required_bits {
                return Err(Error::PlaintextSpaceTooSmall {
                    security_bits,
                    required_bits,
                    available_bits,
                });
            }
        }

        let p_bits = (security_bits / 2) as u64;
        let q_bits = security_bits as u64 - p_bits;
        loop {
            let p = random_prime(rng, p_bits);
            let q = random_prime(rng, q_bits);
            if p == q {
                continue;
            }
            let n = &p * &q;
            debug_assert_eq!(n.bits(), security_bits as u64);
            let phi = (&p - 1u32) * (&q - 1u32);
            if !n.gcd(&phi).is_one() {
                continue;
            }
            let Some(mu) = phi.modinv(&n) else { continue };
            return Ok(Self::assemble(p, q, phi, mu, security_bits));
        }
    }

    fn assemble(p: BigUint, q: BigUint, phi: BigUint, mu: BigUint, security_bits: u32) -> KeyPair {
        let n = &p * &q;
        let public = PublicKey {
            n_squared: &n * &n,
            key_id: key_id_of(&n),
            n,
            security_bits,
        };
        let secret = SecretKey {
            public: public.clone(),
            p,
            q,
            phi,
            mu,
        };
        KeyPair { public, secret }
    }

    /// Rebuild from the two primes, e.g. after loading a secret key document.
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<KeyPair> {
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        let mu = phi
            .modinv(&n)
            .ok_or_else(|| Error::config("secret key", "phi(n) is not invertible mod n"))?;
        let bits = n.bits() as u32;
        Ok(Self::assemble(p, q, phi, mu, bits))
    }

    pub fn is_toy(&self) -> bool {
        self.public.is_toy()
    }
}

impl PublicKey {
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn security_bits(&self) -> u32 {
        self.security_bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn fingerprint(&self) -> String {
        format!("{:016x}", self.key_id)
    }

    pub fn is_toy(&self) -> bool {
        self.security_bits < STRONG_SECURITY_BITS
    }

    /// Fixed wire width of one ciphertext in bytes.
    pub fn ciphertext_bytes(&self) -> usize {
        self.n_squared.bits().div_ceil(8) as usize
    }

    pub fn check(&self, ct: &Ciphertext) -> Result<()> {
        if ct.key_id != self.key_id {
            return Err(Error::KeyMismatch {
                expected: self.key_id,
                found: ct.key_id,
            });
        }
        Ok(())
    }

    /// Encrypt `m` in `[0, n)` with fresh randomness from `rng`.
    pub fn encrypt<R: RngCore + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(Error::PlaintextOutOfRange(m.to_string()));
        }
        let r = loop {
            let r = random_below(rng, &self.n);
            if r.gcd(&self.n).is_one() {
                break r;
            }
        };
        Ok(self.encrypt_with(m, &r))
    }

    fn encrypt_with(&self, m: &BigUint, r: &BigUint) -> Ciphertext {
        // (1 + n)^m = 1 + m n  (mod n^2)
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ciphertext {
            value: (gm * rn) % &self.n_squared,
            key_id: self.key_id,
        }
    }

    pub fn encrypt_u64<R: RngCore + ?Sized>(&self, m: u64, rng: &mut R) -> Result<Ciphertext> {
        self.encrypt(&BigUint::from(m), rng)
    }

    /// `E(a) ⊕ E(b)`: decrypts to `(a + b) mod n`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        self.check(b)?;
        Ok(Ciphertext {
            value: (&a.value * &b.value) % &self.n_squared,
            key_id: self.key_id,
        })
    }

    /// `k · E(m)`: decrypts to `(k m) mod n`.
    pub fn scale(&self, ct: &Ciphertext, k: &BigUint) -> Result<Ciphertext> {
        self.check(ct)?;
        Ok(Ciphertext {
            value: ct.value.modpow(k, &self.n_squared),
            key_id: self.key_id,
        })
    }

    pub fn to_doc(&self) -> PublicKeyDoc {
        PublicKeyDoc {
            version: KEY_DOC_VERSION,
            kind: "public".into(),
            security_bits: self.security_bits,
            modulus_hex: self.n.to_str_radix(16),
            key_id: self.fingerprint(),
        }
    }

    pub fn from_doc(doc: &PublicKeyDoc) -> Result<PublicKey> {
        check_doc_header(doc.version, &doc.kind, "public")?;
        let n = parse_hex("modulus_hex", &doc.modulus_hex)?;
        let pk = PublicKey {
            n_squared: &n * &n,
            key_id: key_id_of(&n),
            security_bits: n.bits() as u32,
            n,
        };
        verify_doc_identity(&pk, doc.security_bits, &doc.key_id)?;
        Ok(pk)
    }
}

impl SecretKey {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn key_id(&self) -> u64 {
        self.public.key_id
    }

    pub fn decrypt(&self, ct: &Ciphertext) -> Result<BigUint> {
        self.public.check(ct)?;
        let n = &self.public.n;
        let u = ct.value.modpow(&self.phi, &self.public.n_squared);
        let l = (u - 1u32) / n;
        Ok((l * &self.mu) % n)
    }

    pub fn to_doc(&self) -> SecretKeyDoc {
        SecretKeyDoc {
            version: KEY_DOC_VERSION,
            kind: "secret".into(),
            security_bits: self.public.security_bits,
            modulus_hex: self.public.n.to_str_radix(16),
            p_hex: self.p.to_str_radix(16),
            q_hex: self.q.to_str_radix(16),
            key_id: self.public.fingerprint(),
        }
    }

    pub fn from_doc(doc: &SecretKeyDoc) -> Result<KeyPair> {
        check_doc_header(doc.version, &doc.kind, "secret")?;
        let p = parse_hex("p_hex", &doc.p_hex)?;
        let q = parse_hex("q_hex", &doc.q_hex)?;
        let n = parse_hex("modulus_hex", &doc.modulus_hex)?;
        if &p * &q != n {
            return Err(Error::config("modulus_hex", "does not equal p * q"));
        }
        let kp = KeyPair::from_primes(p, q)?;
        verify_doc_identity(&kp.public, doc.security_bits, &doc.key_id)?;
        Ok(kp)
    }
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub(crate) fn from_parts(value: BigUint, key_id: u64) -> Ciphertext {
        Ciphertext { value, key_id }
    }
}

/// Versioned JSON form of a public key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeyDoc {
    pub version: u32,
    pub kind: String,
    pub security_bits: u32,
    pub modulus_hex: String,
    pub key_id: String,
}

/// Versioned JSON form of a secret key. Carries the factorization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKeyDoc {
    pub version: u32,
    pub kind: String,
    pub security_bits: u32,
    pub modulus_hex: String,
    pub p_hex: String,
    pub q_hex: String,
    pub key_id: String,
}

fn check_doc_header(version: u32, kind: &str, expected_kind: &str) -> Result<()> {
    if version != KEY_DOC_VERSION {
        return Err(Error::config(
            "version",
            format!("unsupported key document version {version}"),
        ));
    }
    if kind != expected_kind {
        return Err(Error::config(
            "kind",
            format!("expected `{expected_kind}`, found `{kind}`"),
        ));
    }
    Ok(())
}

fn verify_doc_identity(pk: &PublicKey, security_bits: u32, key_id: &str) -> Result<()> {
    if pk.security_bits != security_bits {
        return Err(Error::config("security_bits", "does not match the modulus size"));
    }
    if pk.fingerprint() != key_id {
        return Err(Error::config("key_id", "does not match the modulus"));
    }
    Ok(())
}

fn parse_hex(field: &str, s: &str) -> Result<BigUint> {
    BigUint::parse_bytes(s.as_bytes(), 16)
        .ok_or_else(|| Error::config(field, "not a hexadecimal integer"))
}
