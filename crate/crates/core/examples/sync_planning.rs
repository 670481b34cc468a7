// Turn a network trace into synchronization weights and delay estimates.
//
//     cargo run --example sync_planning

use std::error::Error;
use std::path::Path;

use fedcloud::sync::{self, WeightPolicy};

pub fn run() -> Result<(), Box<dyn Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let platforms = sync::load_platforms(&data.join("platforms.json"))?;
    let samples = sync::ingest_trace(&data.join("trace.csv"))?;
    println!("{} platforms, {} samples", platforms.len(), samples.len());

    let plan = sync::plan(&platforms, &samples, &WeightPolicy::default())?;
    for ((id, w), p) in plan.weights.platform_ids.iter().zip(&plan.weights.weights).zip(&platforms) {
        println!(
            "{id:<16} weight {w:.4}  transfer {:.4} s  jitter {:.1} ms",
            p.transfer_time_s(),
            plan.mean_jitter_ms[id]
        );
    }
    println!("total delay          {:.4} s", plan.total_delay_s);
    println!("weighted sync delay  {:.4} s", plan.weighted_sync_delay_s);

    // A window that excludes older samples still finds every platform at t=60.
    let tight = WeightPolicy { staleness_window_s: 1.0 };
    println!("tight window weights {:.4?}", sync::derive_sync_weights(&platforms, &samples, &tight)?.weights);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
