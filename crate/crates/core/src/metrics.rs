//! Leakage, communication and computation metrics over round transcripts.
//!
//! Leakage is measured with a closed-form gradient-inversion attack that is
//! exact for squared loss on a single sample: every gradient step moves the
//! model along `(x, 1)`, so the transmitted update is proportional to the
//! sample with a trailing one and `x = update[..d] / update[d]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::he::{CIPHER_HEADER_BYTES, CIPHER_PREFIX_BYTES};
use crate::runtime::{
    Mode, Party, PayloadKind, PayloadTag, RoundReport, RoundTranscript, SyntheticTask, TaskKind,
};
use crate::vector::{GradientVector, PLAIN_HEADER_BYTES};

/// A sample counts as leaked below this relative reconstruction error.
pub const LEAK_THRESHOLD: f64 = 1e-3;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 9] = [
    "round",
    "mode",
    "leakage_rate",
    "upload_bytes",
    "download_bytes",
    "encrypt_ops",
    "decrypt_ops",
    "homomorphic_ops",
    "wall_clock_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageResult {
    pub round: u32,
    pub mode: Mode,
    pub reconstructed_fraction: f64,
    /// Mean relative error over all samples; a sample with nothing to attack
    /// counts as 1 (the all-zero guess).
    pub mean_reconstruction_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostResult {
    pub round: u32,
    pub mode: Option<Mode>,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub encrypt_ops: u64,
    pub decrypt_ops: u64,
    pub homomorphic_ops: u64,
    pub wall_clock_ms: f64,
}

impl CostResult {
    /// Sum a series of per-round costs; empty input gives all zeros.
    pub fn total(costs: &[CostResult]) -> CostResult {
        costs.iter().fold(CostResult::default(), |a, c| CostResult {
            round: a.round.max(c.round),
            mode: c.mode.or(a.mode),
            upload_bytes: a.upload_bytes + c.upload_bytes,
            download_bytes: a.download_bytes + c.download_bytes,
            encrypt_ops: a.encrypt_ops + c.encrypt_ops,
            decrypt_ops: a.decrypt_ops + c.decrypt_ops,
            homomorphic_ops: a.homomorphic_ops + c.homomorphic_ops,
            wall_clock_ms: a.wall_clock_ms + c.wall_clock_ms,
        })
    }
}

/// Whether the inversion attack is exact for `task`.
pub fn leakage_supported(task: &SyntheticTask) -> bool {
    task.kind == TaskKind::LinearRegression && task.clients.iter().all(|c| c.len() == 1)
}

/// Recover the single sample behind an update, if the update allows it.
pub fn invert_update(update: &[f64]) -> Option<Vec<f64>> {
    let (&bias, weights) = update.split_last()?;
    if bias == 0.0 || !bias.is_finite() {
        return None;
    }
    Some(weights.iter().map(|w| w / bias).collect())
}

fn relative_error(guess: &[f64], truth: &[f64]) -> f64 {
    let diff: f64 = guess.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

/// Run the inversion attack against every plaintext or noised update in
/// the transcript. Ciphertexts and metadata contribute nothing.
pub fn leakage_rate(transcript: &RoundTranscript, task: &SyntheticTask) -> Result<LeakageResult> {
    if task.kind != TaskKind::LinearRegression {
        return Err(Error::UnsupportedTask(
            "inversion needs squared loss (linear_regression)".into(),
        ));
    }
    if let Some((k, c)) = task.clients.iter().enumerate().find(|(_, c)| c.len() != 1) {
        return Err(Error::UnsupportedTask(format!(
            "inversion needs one sample per client; client {k} has {}",
            c.len()
        )));
    }

    let mut leaked = 0usize;
    let mut total_err = 0.0;
    for (k, data) in task.clients.iter().enumerate() {
        let truth = &data.features[0];
        let mut best = 1.0f64;
        for p in transcript.payloads.iter().filter(|p| {
            p.from == Party::Client(k as u32)
                && p.kind == PayloadKind::Update
                && matches!(p.tag, PayloadTag::Plaintext | PayloadTag::Noised)
        }) {
            let (update, _) = GradientVector::from_wire(&p.bytes)?;
            if let Some(guess) = invert_update(&update) {
                best = best.min(relative_error(&guess, truth));
            }
        }
        if best < LEAK_THRESHOLD {
            leaked += 1;
        }
        total_err += best.min(1.0);
    }
    let n = task.clients.len().max(1) as f64;
    Ok(LeakageResult {
        round: transcript.round,
        mode: transcript.mode,
        reconstructed_fraction: leaked as f64 / n,
        mean_reconstruction_error: total_err / n,
    })
}

/// Bytes moved between clients and server, straight from the serialized payloads.
pub fn communication_cost(transcript: &RoundTranscript) -> CostResult {
    CostResult {
        round: transcript.round,
        mode: Some(transcript.mode),
        upload_bytes: transcript.upload_bytes(),
        download_bytes: transcript.download_bytes(),
        ..Default::default()
    }
}

/// Operation counts plus measured wall-clock.
pub fn computation_cost(transcript: &RoundTranscript) -> CostResult {
    CostResult {
        round: transcript.round,
        mode: Some(transcript.mode),
        encrypt_ops: transcript.ops.encrypt,
        decrypt_ops: transcript.ops.decrypt,
        homomorphic_ops: transcript.ops.homomorphic(),
        wall_clock_ms: transcript.timings.total_ms,
        ..Default::default()
    }
}

pub fn plaintext_vector_bytes(dim: usize) -> usize {
    PLAIN_HEADER_BYTES + 8 * dim
}

pub fn ciphertext_vector_bytes(dim: usize, ciphertext_bytes: usize) -> usize {
    CIPHER_HEADER_BYTES + dim * (CIPHER_PREFIX_BYTES + ciphertext_bytes)
}

/// Encrypted over plaintext payload size for one vector.
pub fn ciphertext_expansion(dim: usize, ciphertext_bytes: usize) -> f64 {
    ciphertext_vector_bytes(dim, ciphertext_bytes) as f64 / plaintext_vector_bytes(dim) as f64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat metrics CSV, one row per round, preceded by a schema comment line.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[RoundReport]) -> Result<()> {
    writeln!(out, "# fedcloud metrics schema v{METRICS_SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.mode.to_string(),
            fmt_opt(r.leakage_rate),
            r.upload_bytes.to_string(),
            r.download_bytes.to_string(),
            r.encrypt_ops.to_string(),
            r.decrypt_ops.to_string(),
            r.homomorphic_ops.to_string(),
            r.wall_clock_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{Dataset, SyntheticTask};

    #[test]
    fn inversion_recovers_scaled_sample() {
        let x = [0.3, -1.2, 2.0];
        let r = -0.37;
        let update: Vec<f64> = x.iter().map(|v| r * v).chain([r]).collect();
        let guess = invert_update(&update).unwrap();
        assert!(relative_error(&guess, &x) < 1e-15);
        assert!(invert_update(&[1.0, 0.0]).is_none());
        assert!(invert_update(&[]).is_none());
    }

    #[test]
    fn unsupported_tasks_refused() {
        let mut task = SyntheticTask {
            kind: TaskKind::LogisticRegression,
            dim: 1,
            clients: vec![Dataset {
                features: vec![vec![1.0]],
                labels: vec![1.0],
            }],
            ground_truth: GradientVector(vec![1.0, 0.0]),
        };
        let t = RoundTranscript::new(0, Mode::Fl);
        assert!(matches!(leakage_rate(&t, &task), Err(Error::UnsupportedTask(_))));
        task.kind = TaskKind::LinearRegression;
        task.clients[0].features.push(vec![2.0]);
        task.clients[0].labels.push(0.0);
        assert!(matches!(leakage_rate(&t, &task), Err(Error::UnsupportedTask(_))));
    }

    #[test]
    fn empty_series_costs_nothing() {
        let c = CostResult::total(&[]);
        assert_eq!(c, CostResult::default());
    }

    #[test]
    fn layout_sizes() {
        assert_eq!(plaintext_vector_bytes(10), 92);
        assert_eq!(ciphertext_vector_bytes(10, 16), 185);
        assert!((ciphertext_expansion(10, 16) - 185.0 / 92.0).abs() < 1e-15);
    }
}
