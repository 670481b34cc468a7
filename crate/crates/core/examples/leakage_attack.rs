// Reconstruct client samples from the updates a server observes. Plain FL
// gives them away; encrypted modes leave nothing to invert.
//
//     cargo run --example leakage_attack

use std::error::Error;

use fedcloud::metrics::leakage_rate;
use fedcloud::runtime::{run_experiment_with, DpSpec, Mode, RunOptions, Scenario, TaskKind, TaskSpec};

pub fn run() -> Result<(), Box<dyn Error>> {
    let task = TaskSpec {
        kind: TaskKind::LinearRegression,
        dim: 6,
        samples_per_client: 1,
        heterogeneity_skew: 0.0,
        label_noise: 0.0,
        local_epochs: 1,
        learning_rate: 0.1,
    };
    println!("{:<22} {:>8} {:>14}", "mode", "leaked", "mean_rel_err");
    let mut cases: Vec<(String, Scenario)> = [Mode::Fl, Mode::HeFl, Mode::Ours]
        .into_iter()
        .map(|m| (m.to_string(), Scenario::new(m, 4, 3, task.clone(), 5)))
        .collect();
    for sigma in [0.0, 1e-4, 1.0] {
        let mut s = Scenario::new(Mode::DpFl, 4, 3, task.clone(), 5);
        s.dp = Some(DpSpec { noise_multiplier: sigma, clip: 10.0 });
        cases.push((format!("dp_fl sigma={sigma}"), s));
    }
    for (name, scenario) in cases {
        let run = run_experiment_with(&scenario, &RunOptions::default(), None)?;
        let first = &run.transcripts[0];
        let l = leakage_rate(first, &run.task)?;
        println!("{name:<22} {:>8.3} {:>14.3e}", l.reconstructed_fraction, l.mean_reconstruction_error);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
