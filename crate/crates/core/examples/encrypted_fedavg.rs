// Plain FedAvg versus the same average computed over ciphertexts.
//
//     cargo run --example encrypted_fedavg

use std::error::Error;

use fedcloud::aggregation::{encrypted_aggregate, finalize_mean};
use fedcloud::he::{self, encrypt_vector_blocked, BlockSpec, FixedPointCodec, Headroom};
use fedcloud::ops::OpCounter;
use fedcloud::GradientVector;

pub fn run() -> Result<(), Box<dyn Error>> {
    let codec = FixedPointCodec::default();
    let updates = vec![
        GradientVector(vec![0.5, -1.0, 2.0]),
        GradientVector(vec![1.5, 0.25, -2.0]),
        GradientVector(vec![-0.75, 0.0, 1.0]),
    ];
    let k = updates.len();
    let kp = he::keygen(64, Some(Headroom::new(codec, k)), 3)?;
    let spec = BlockSpec::for_dim(3, 1)?;

    let ops = OpCounter::default();
    let encrypted = updates
        .iter()
        .enumerate()
        .map(|(i, u)| {
            ops.encrypted(u.dim() as u64);
            encrypt_vector_blocked(&kp.public, u, &codec, spec, i as u64)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summed = encrypted_aggregate(&kp.public, &encrypted, &ops)?;
    let mean = finalize_mean(&kp.secret, &summed, k, &ops)?;

    let mut plain = GradientVector::zeros(3);
    for u in &updates {
        plain.add_assign(u)?;
    }
    let plain = plain.scaled(1.0 / k as f64);

    println!("plain mean     {:?}", plain.0);
    println!("encrypted mean {:?}", mean.0);
    println!("max |diff|     {:e}", mean.max_abs_diff(&plain));
    println!("ops            {:?}", ops.snapshot());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
