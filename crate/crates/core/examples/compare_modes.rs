// Run the same seeded scenario under all five modes and print one summary
// line per mode.
//
//     cargo run --release --example compare_modes

use std::error::Error;

use fedcloud::runtime::{run_experiment, Mode, Scenario, TaskKind, TaskSpec};

pub fn run() -> Result<(), Box<dyn Error>> {
    let tasks = [
        (
            "linear, one sample per client",
            TaskSpec {
                kind: TaskKind::LinearRegression,
                dim: 8,
                samples_per_client: 1,
                heterogeneity_skew: 0.0,
                label_noise: 0.0,
                local_epochs: 1,
                learning_rate: 0.05,
            },
            4,
            10,
        ),
        (
            "separable logistic",
            TaskSpec {
                kind: TaskKind::LogisticRegression,
                dim: 10,
                samples_per_client: 40,
                heterogeneity_skew: 0.3,
                label_noise: 0.0,
                local_epochs: 2,
                learning_rate: 0.5,
            },
            5,
            50,
        ),
    ];

    for (name, task, clients, rounds) in tasks {
        println!("== {name} (K={clients}, T={rounds})");
        println!(
            "{:<12} {:>10} {:>8} {:>8} {:>12} {:>10} {:>10}",
            "mode", "loss", "acc", "leak", "upload_B", "enc_ops", "hom_ops"
        );
        for mode in Mode::ALL {
            let scenario = Scenario::new(mode, clients, rounds, task.clone(), 42);
            let report = run_experiment(&scenario)?;
            let s = &report.summary;
            println!(
                "{:<12} {:>10.5} {:>8} {:>8} {:>12} {:>10} {:>10}",
                mode.as_str(),
                s.final_loss,
                s.final_accuracy.map_or("-".into(), |a| format!("{a:.3}")),
                s.mean_leakage_rate.map_or("-".into(), |l| format!("{l:.3}")),
                s.total_upload_bytes,
                s.total_ops.encrypt,
                s.total_ops.homomorphic(),
            );
        }
        println!();
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
