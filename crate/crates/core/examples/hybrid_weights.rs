// Dynamic client weights from loss, data size and bandwidth, and the
// hybrid rule that mixes an encrypted update with its complement.
//
//     cargo run --example hybrid_weights

use std::error::Error;

use fedcloud::aggregation::{
    client_weight, encrypt_complement, finalize_hybrid, hybrid_aggregate, mix_weights,
    weighted_global_update, ClientMeta, WeightMode, WeightParams,
};
use fedcloud::he::{self, encrypt_vector_blocked, BlockSpec, FixedPointCodec, Headroom};
use fedcloud::ops::OpCounter;
use fedcloud::GradientVector;

fn meta(id: &str, loss: f64, data_size: u64, bandwidth: f64) -> ClientMeta {
    ClientMeta {
        client_id: id.into(),
        loss,
        data_size,
        bandwidth,
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let metas = [
        meta("edge-a", 0.9, 200, 400.0),
        meta("edge-b", 0.3, 50, 100.0),
        meta("edge-c", 0.5, 120, 800.0),
    ];
    let updates = [
        GradientVector(vec![0.2, -0.4]),
        GradientVector(vec![-0.1, 0.3]),
        GradientVector(vec![0.05, 0.05]),
    ];

    for mode in [WeightMode::FormulaAsWritten, WeightMode::InverseLoss] {
        let params = WeightParams { alpha: 0.5, mode };
        let weighted: Vec<_> = metas
            .iter()
            .zip(&updates)
            .map(|(m, u)| (client_weight(m, &params), u.clone()))
            .collect();
        let ws: Vec<String> = weighted.iter().map(|(w, _)| format!("{w:.3e}")).collect();
        println!("{mode:?}: weights [{}] -> update {:?}", ws.join(", "), weighted_global_update(&weighted)?.0);
    }

    let params = WeightParams::default();
    let (mix, fell_back) = mix_weights(&metas, &params)?;
    println!("mix weights {mix:.3?} (uniform fallback: {fell_back})");

    let codec = FixedPointCodec::default();
    let kp = he::keygen(64, Some(Headroom::new(codec, 2 * metas.len())), 11)?;
    let spec = BlockSpec::for_dim(2, 1)?;
    let ops = OpCounter::default();
    let mut contributions = Vec::new();
    for (i, (u, &m)) in updates.iter().zip(&mix).enumerate() {
        let enc = encrypt_vector_blocked(&kp.public, u, &codec, spec, i as u64)?;
        let comp = encrypt_complement(&kp.public, u, m, &codec, spec, 100 + i as u64)?;
        contributions.push((enc, comp));
    }
    let summed = hybrid_aggregate(&kp.public, &contributions, &mix, &ops)?;
    let global = finalize_hybrid(&kp.secret, &summed, updates.len(), &ops)?;
    println!("hybrid aggregate {:?}", global.0);
    println!("homomorphic ops  {}", ops.snapshot().homomorphic());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
