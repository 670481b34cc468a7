//! Blocked vector encryption.
//!
//! A vector is cut into `n_blocks` contiguous blocks; each block is an
//! independent unit of work with its own seeded randomness stream, so the
//! ciphertexts do not depend on how many workers run the blocks.

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::FixedPointCodec;
use super::paillier::{Ciphertext, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::vector::GradientVector;

/// dim (u32) + frac_bits (u8)
pub const CIPHER_HEADER_BYTES: usize = 5;
pub const CIPHER_PREFIX_BYTES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub n_blocks: usize,
    pub block_len: usize,
}

impl BlockSpec {
    /// Split `dim` coordinates into `n_blocks` blocks of equal length, the
    /// last one possibly partial.
    pub fn for_dim(dim: usize, n_blocks: usize) -> Result<BlockSpec> {
        if n_blocks == 0 {
            return Err(Error::config("n_blocks", "must be positive"));
        }
        Ok(BlockSpec {
            n_blocks,
            block_len: dim.div_ceil(n_blocks).max(1),
        })
    }

    pub fn covers(&self, dim: usize) -> bool {
        self.n_blocks > 0 && self.block_len > 0 && self.n_blocks * self.block_len >= dim
    }

    fn check(&self, dim: usize) -> Result<()> {
        if !self.covers(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.n_blocks * self.block_len,
            });
        }
        Ok(())
    }
}

/// Per-coordinate ciphertexts grouped into blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CipherVector {
    blocks: Vec<Vec<Ciphertext>>,
    dim: usize,
    codec: FixedPointCodec,
    key_id: u64,
}

impl CipherVector {
    pub(crate) fn from_flat(
        cts: Vec<Ciphertext>,
        spec: BlockSpec,
        codec: FixedPointCodec,
        key_id: u64,
    ) -> Result<CipherVector> {
        spec.check(cts.len())?;
        let dim = cts.len();
        let mut blocks = Vec::with_capacity(spec.n_blocks);
        let mut it = cts.into_iter();
        loop {
            let block: Vec<_> = it.by_ref().take(spec.block_len).collect();
            if block.is_empty() {
                break;
            }
            blocks.push(block);
        }
        Ok(CipherVector {
            blocks,
            dim,
            codec,
            key_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// Non-empty blocks in order.
    pub fn blocks(&self) -> &[Vec<Ciphertext>] {
        &self.blocks
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            n_blocks: self.blocks.len().max(1),
            block_len: self.blocks.first().map_or(1, Vec::len),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Ciphertext> {
        self.blocks.iter().flatten()
    }

    pub fn to_flat(&self) -> Vec<Ciphertext> {
        self.iter().cloned().collect()
    }

    /// Length of [`CipherVector::to_bytes`] output for `dim` coordinates.
    pub fn wire_len(dim: usize, ciphertext_bytes: usize) -> usize {
        CIPHER_HEADER_BYTES + dim * (CIPHER_PREFIX_BYTES + ciphertext_bytes)
    }

    /// Binary layout: `dim: u32 BE`, `frac_bits: u8`, then each coordinate
    /// as a `u16 BE` byte length followed by the big-endian ciphertext,
    /// zero-padded to the key's fixed ciphertext width.
    pub fn to_bytes(&self, pk: &PublicKey) -> Result<Vec<u8>> {
        if pk.key_id() != self.key_id {
            return Err(Error::KeyMismatch {
                expected: pk.key_id(),
                found: self.key_id,
            });
        }
        let width = pk.ciphertext_bytes();
        let frac = u8::try_from(self.codec.frac_bits)
            .map_err(|_| Error::Wire("frac_bits does not fit in u8".into()))?;
        let mut out = Vec::with_capacity(Self::wire_len(self.dim, width));
        out.extend_from_slice(&(self.dim as u32).to_be_bytes());
        out.push(frac);
        for ct in self.iter() {
            let raw = ct.value().to_bytes_be();
            out.extend_from_slice(&(width as u16).to_be_bytes());
            out.extend(std::iter::repeat_n(0u8, width - raw.len()));
            out.extend_from_slice(&raw);
        }
        Ok(out)
    }

    pub fn from_bytes(
        bytes: &[u8],
        pk: &PublicKey,
        codec: FixedPointCodec,
        spec: BlockSpec,
    ) -> Result<CipherVector> {
        if bytes.len() < CIPHER_HEADER_BYTES {
            return Err(Error::Wire("truncated cipher vector header".into()));
        }
        let dim = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes[4] as u32 != codec.frac_bits {
            return Err(Error::CodecMismatch);
        }
        let mut pos = CIPHER_HEADER_BYTES;
        let mut cts = Vec::with_capacity(dim);
        for i in 0..dim {
            let len_bytes = bytes
                .get(pos..pos + CIPHER_PREFIX_BYTES)
                .ok_or_else(|| Error::Wire(format!("truncated at coordinate {i}")))?;
            let len = u16::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += CIPHER_PREFIX_BYTES;
            let body = bytes
                .get(pos..pos + len)
                .ok_or_else(|| Error::Wire(format!("truncated at coordinate {i}")))?;
            pos += len;
            let value = BigUint::from_bytes_be(body);
            if &value >= pk.modulus_squared() {
                return Err(Error::Wire(format!("coordinate {i} outside ciphertext space")));
            }
            cts.push(Ciphertext::from_parts(value, pk.key_id()));
        }
        if pos != bytes.len() {
            return Err(Error::Wire("trailing bytes after cipher vector".into()));
        }
        CipherVector::from_flat(cts, spec, codec, pk.key_id())
    }
}

/// Encrypt `encode(v)` coordinate-wise, block by block in parallel.
///
/// Block `b` draws its randomness from the stream `(seed, b)`; the result is
/// identical for any rayon pool size.
pub fn encrypt_vector_blocked(
    pk: &PublicKey,
    v: &GradientVector,
    codec: &FixedPointCodec,
    spec: BlockSpec,
    seed: u64,
) -> Result<CipherVector> {
    codec.validate()?;
    spec.check(v.dim())?;
    let n = pk.modulus();
    let blocks: Vec<Vec<Ciphertext>> = v
        .chunks(spec.block_len)
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(b, chunk)| {
            let mut rng = rng::stream(seed, Purpose::Encryption, b as u64);
            chunk
                .iter()
                .map(|&x| pk.encrypt(&codec.encode(x, n), &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(CipherVector {
        blocks,
        dim: v.dim(),
        codec: *codec,
        key_id: pk.key_id(),
    })
}

/// Decrypt every coordinate to its raw residue in `Z_n`.
pub fn decrypt_raw(sk: &SecretKey, cv: &CipherVector) -> Result<Vec<BigUint>> {
    if sk.key_id() != cv.key_id {
        return Err(Error::KeyMismatch {
            expected: sk.key_id(),
            found: cv.key_id,
        });
    }
    let blocks: Vec<Vec<BigUint>> = cv
        .blocks
        .par_iter()
        .map(|block| block.iter().map(|ct| sk.decrypt(ct)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

/// Decrypt and decode, reading upper-half residues as negatives.
pub fn decrypt_vector(sk: &SecretKey, cv: &CipherVector) -> Result<GradientVector> {
    let n = sk.public().modulus();
    Ok(GradientVector(
        decrypt_raw(sk, cv)?
            .iter()
            .map(|m| cv.codec.decode(m, n))
            .collect(),
    ))
}

/// Run `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::paillier::KeyPair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn keys() -> KeyPair {
        KeyPair::generate(64, None, &mut ChaCha20Rng::seed_from_u64(21)).unwrap()
    }

    #[test]
    fn block_count_does_not_change_decryption() {
        let kp = keys();
        let codec = FixedPointCodec::default();
        let v = GradientVector(vec![1.0, 2.0]);
        let one = encrypt_vector_blocked(&kp.public, &v, &codec, BlockSpec::for_dim(2, 1).unwrap(), 3)
            .unwrap();
        let two = encrypt_vector_blocked(&kp.public, &v, &codec, BlockSpec::for_dim(2, 2).unwrap(), 3)
            .unwrap();
        assert_eq!(one.blocks().len(), 1);
        assert_eq!(two.blocks().len(), 2);
        let a = decrypt_vector(&kp.secret, &one).unwrap();
        assert_eq!(a, decrypt_vector(&kp.secret, &two).unwrap());
        assert_eq!(a, v);
    }

    #[test]
    fn partition_arithmetic() {
        let kp = keys();
        let v = GradientVector::zeros(1000);
        let spec = BlockSpec::for_dim(1000, 16).unwrap();
        assert_eq!(spec.block_len, 63);
        let cv =
            encrypt_vector_blocked(&kp.public, &v, &FixedPointCodec::default(), spec, 0).unwrap();
        assert_eq!(cv.blocks().len(), 16);
        assert_eq!(cv.blocks()[15].len(), 1000 - 15 * 63);
        assert_eq!(cv.dim(), 1000);
        assert_eq!(cv.iter().count(), 1000);
        // all-zero input decrypts to exact zeros
        assert!(decrypt_vector(&kp.secret, &cv).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn random_vector_round_trip_within_resolution() {
        let kp = keys();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let v = GradientVector((0..64).map(|_| rng.random_range(-8.0..8.0)).collect());
        let cv = encrypt_vector_blocked(&kp.public, &v, &codec, BlockSpec::for_dim(64, 5).unwrap(), 1)
            .unwrap();
        let back = decrypt_vector(&kp.secret, &cv).unwrap();
        assert!(back.max_abs_diff(&v) <= codec.resolution());
    }

    #[test]
    fn signs_survive_on_small_modulus() {
        // 16-bit modulus with 4 fractional bits: signed-wraparound oracle is
        // plain integer arithmetic on round(x * 16).
        let kp = KeyPair::generate(16, None, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let codec = FixedPointCodec::new(4, 4, 8.0).unwrap();
        let v = GradientVector(vec![-1.0, -0.0625, 3.5, -8.0, 7.9375]);
        let cv = encrypt_vector_blocked(&kp.public, &v, &codec, BlockSpec::for_dim(5, 2).unwrap(), 0)
            .unwrap();
        let n: u64 = kp.public.modulus().try_into().unwrap();
        let raw = decrypt_raw(&kp.secret, &cv).unwrap();
        for (x, m) in v.iter().zip(&raw) {
            let q = (x * 16.0).round() as i64;
            let expected = q.rem_euclid(n as i64) as u64;
            assert_eq!(*m, BigUint::from(expected));
        }
        assert_eq!(decrypt_vector(&kp.secret, &cv).unwrap(), v);
    }

    #[test]
    fn spec_must_cover_dimension() {
        let kp = keys();
        let v = GradientVector::zeros(10);
        let spec = BlockSpec {
            n_blocks: 2,
            block_len: 4,
        };
        assert!(matches!(
            encrypt_vector_blocked(&kp.public, &v, &FixedPointCodec::default(), spec, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn worker_count_does_not_change_ciphertexts() {
        let kp = keys();
        let v = GradientVector((0..50).map(|i| i as f64 / 10.0 - 2.5).collect());
        let spec = BlockSpec::for_dim(50, 7).unwrap();
        let codec = FixedPointCodec::default();
        let run = |w| {
            with_workers(w, || encrypt_vector_blocked(&kp.public, &v, &codec, spec, 9).unwrap())
                .unwrap()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn wire_layout_sizes_and_round_trip() {
        let kp = keys();
        let codec = FixedPointCodec::default();
        let v = GradientVector((0..10).map(|i| i as f64 - 4.5).collect());
        let spec = BlockSpec::for_dim(10, 3).unwrap();
        let cv = encrypt_vector_blocked(&kp.public, &v, &codec, spec, 2).unwrap();
        let bytes = cv.to_bytes(&kp.public).unwrap();
        assert_eq!(kp.public.ciphertext_bytes(), 16);
        assert_eq!(bytes.len(), 4 + 1 + 10 * (2 + 16));
        assert_eq!(bytes.len(), CipherVector::wire_len(10, 16));
        let back = CipherVector::from_bytes(&bytes, &kp.public, codec, spec).unwrap();
        assert_eq!(back, cv);
        assert!(CipherVector::from_bytes(&bytes[..bytes.len() - 1], &kp.public, codec, spec).is_err());
    }

    #[test]
    fn decrypt_with_foreign_key_fails() {
        let kp = keys();
        let other = KeyPair::generate(64, None, &mut ChaCha20Rng::seed_from_u64(99)).unwrap();
        let cv = encrypt_vector_blocked(
            &kp.public,
            &GradientVector(vec![1.0]),
            &FixedPointCodec::default(),
            BlockSpec::for_dim(1, 1).unwrap(),
            0,
        )
        .unwrap();
        assert!(matches!(
            decrypt_vector(&other.secret, &cv),
            Err(Error::KeyMismatch { .. })
        ));
    }
}
