//! Additively homomorphic encryption of fixed-point gradient vectors.

mod blocked;
mod codec;
mod paillier;
mod prime;

pub use blocked::{
    decrypt_raw, decrypt_vector, encrypt_vector_blocked, with_workers, BlockSpec, CipherVector,
    CIPHER_HEADER_BYTES, CIPHER_PREFIX_BYTES,
};
pub use codec::{decode_scaled, to_residue, to_signed, FixedPointCodec};
pub use paillier::{
    Ciphertext, Headroom, KeyPair, PublicKey, PublicKeyDoc, SecretKey, SecretKeyDoc,
    KEY_DOC_VERSION, MIN_SECURITY_BITS, STRONG_SECURITY_BITS, TOY_KEY_WARNING,
};

/// Seeded key generation.
pub fn keygen(security_bits: u32, headroom: Option<Headroom>, seed: u64) -> crate::Result<KeyPair> {
    let mut rng = crate::rng::stream(seed, crate::rng::Purpose::KeyGen, 0);
    KeyPair::generate(security_bits, headroom, &mut rng)
}
