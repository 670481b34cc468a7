// Encrypt one vector with several block layouts and worker counts. The
// ciphertexts depend only on the seed and layout, never on the pool size.
//
//     cargo run --release --example blocked_encryption

use std::error::Error;
use std::time::Instant;

use fedcloud::he::{
    self, decrypt_vector, encrypt_vector_blocked, with_workers, BlockSpec, CipherVector,
    FixedPointCodec,
};
use fedcloud::GradientVector;

pub fn run() -> Result<(), Box<dyn Error>> {
    let dim = 1000;
    let codec = FixedPointCodec::default();
    let kp = he::keygen(64, None, 9)?;
    let v = GradientVector((0..dim).map(|i| ((i as f64) * 0.37).sin()).collect());

    println!("{:>8} {:>9} {:>8} {:>10}", "n_blocks", "block_len", "workers", "ms");
    let mut reference = None;
    for n_blocks in [1, 4, 16] {
        let spec = BlockSpec::for_dim(dim, n_blocks)?;
        let mut first: Option<CipherVector> = None;
        for workers in [1, 4] {
            let t = Instant::now();
            let cv = with_workers(workers, || encrypt_vector_blocked(&kp.public, &v, &codec, spec, 5))??;
            let ms = t.elapsed().as_secs_f64() * 1e3;
            println!("{n_blocks:>8} {:>9} {workers:>8} {ms:>10.1}", spec.block_len);
            match &first {
                Some(f) => assert!(f == &cv, "pool size changed the ciphertexts"),
                None => first = Some(cv),
            }
        }
        let back = decrypt_vector(&kp.secret, first.as_ref().unwrap())?;
        let err = back.max_abs_diff(&v);
        assert!(err <= codec.resolution());
        match &reference {
            Some(r) => assert!(r == &back),
            None => reference = Some(back),
        }
    }

    let ct = kp.public.ciphertext_bytes();
    println!(
        "wire size: {} bytes encrypted vs {} plaintext",
        CipherVector::wire_len(dim, ct),
        GradientVector::zeros(dim).to_wire(0).len()
    );
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
