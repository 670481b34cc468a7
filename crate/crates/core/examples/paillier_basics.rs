// Generate a key, encrypt two fixed-point values, add and scale them under
// encryption, and round-trip the key through its JSON documents.
//
//     cargo run --example paillier_basics

use std::error::Error;

use fedcloud::he::{self, decode_scaled, FixedPointCodec, Headroom, PublicKey, SecretKey};
use fedcloud::rng::{self, Purpose};
use num_bigint::BigUint;

pub fn run() -> Result<(), Box<dyn Error>> {
    let codec = FixedPointCodec::default();
    let kp = he::keygen(64, Some(Headroom::new(codec, 8)), 1)?;
    let pk = &kp.public;
    println!("key {} ({} bits, toy: {})", pk.fingerprint(), pk.security_bits(), pk.is_toy());

    let n = pk.modulus();
    let mut r = rng::stream(1, Purpose::Encryption, 0);
    let a = pk.encrypt(&codec.encode(1.25, n), &mut r)?;
    let b = pk.encrypt(&codec.encode(-3.5, n), &mut r)?;

    let sum = pk.add(&a, &b)?;
    println!("1.25 + -3.5  = {}", codec.decode(&kp.secret.decrypt(&sum)?, n));

    // Scaling by an encoded constant doubles the fractional bits.
    let k = BigUint::from(codec.quantize(0.5) as u64);
    let half = pk.scale(&sum, &k)?;
    println!(
        "0.5 * -2.25  = {}",
        decode_scaled(&kp.secret.decrypt(&half)?, n, 2 * codec.frac_bits)
    );

    let pk_json = serde_json::to_string(&pk.to_doc())?;
    let sk_json = serde_json::to_string(&kp.secret.to_doc())?;
    let pk2 = PublicKey::from_doc(&serde_json::from_str(&pk_json)?)?;
    let kp2 = SecretKey::from_doc(&serde_json::from_str(&sk_json)?)?;
    assert_eq!(pk2.key_id(), pk.key_id());
    assert_eq!(kp2.secret.decrypt(&sum)?, kp.secret.decrypt(&sum)?);
    println!("public key document: {pk_json}");

    // Too little plaintext space for 8 clients at the default codec.
    match he::keygen(32, Some(Headroom::new(codec, 8)), 1) {
        Err(e) => println!("32-bit key rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
