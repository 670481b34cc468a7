//! Round-based orchestration of clients and server across the five modes.
//!
//! | mode          | client sends                         | server rule                   |
//! |---------------|--------------------------------------|-------------------------------|
//! | `centralized` | nothing (pooled data)                | one gradient pass on the pool |
//! | `fl`          | plaintext update                     | uniform weighted mean         |
//! | `he_fl`       | blocked encrypted update             | homomorphic sum, mean on decrypt |
//! | `dp_fl`       | clipped + noised update              | uniform weighted mean         |
//! | `ours`        | loss/size/bandwidth, then two encrypted terms | hybrid rule with dynamic mix weights |
//!
//! Clients share the key pair; the server only ever holds the public key
//! and returns encrypted aggregates, which each client decrypts.

pub mod dp;
pub mod scenario;
pub mod task;
pub mod transcript;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    encrypt_complement, encrypted_aggregate, finalize_hybrid, finalize_mean, hybrid_aggregate,
    mix_weights, weighted_global_update, ClientMeta,
};
use crate::error::{Error, Result};
use crate::he::{self, encrypt_vector_blocked, CipherVector, Headroom, KeyPair};
use crate::metrics;
use crate::ops::{OpCounter, OpCounts};
use crate::rng::{self, Purpose};
use crate::sync::{self, CloudPlatform, NetworkSample, WeightPolicy};
use crate::vector::GradientVector;

pub use scenario::{CryptoSpec, DpSpec, Mode, Scenario};
pub use task::{local_train, Dataset, SyntheticTask, TaskKind, TaskSpec};
pub use transcript::{Party, Payload, PayloadKind, PayloadTag, RoundTimings, RoundTranscript};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Salt separating complement-term encryption streams from update streams.
const COMPLEMENT_SALT: u64 = 0xC0_4D_1E_47;

/// Knobs that do not change the simulated outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Write measured wall-clock into reports. Off keeps reports byte-identical
    /// across runs.
    pub record_timings: bool,
    /// Overrides the scenario's worker count.
    pub workers: Option<usize>,
}

/// Everything carried from one round to the next.
#[derive(Debug, Clone)]
pub struct RunState {
    pub round: u32,
    pub model: GradientVector,
    pub task: Arc<SyntheticTask>,
    pub keys: Option<Arc<KeyPair>>,
    /// Samples driving the sync weights; synthesized from the platforms when
    /// no trace is supplied.
    pub network: Arc<Vec<NetworkSample>>,
}

impl RunState {
    pub fn init(scenario: &Scenario) -> Result<RunState> {
        scenario.validate()?;
        let task = SyntheticTask::generate(&scenario.task, scenario.n_clients, scenario.seed)?;
        let keys = match &scenario.crypto {
            Some(c) if scenario.mode.is_encrypted() => {
                let headroom = Headroom::new(c.codec(), scenario.n_clients);
                let kp = he::keygen(c.security_bits, Some(headroom), scenario.seed)?;
                if kp.is_toy() {
                    log::warn!("{} ({} bits)", he::TOY_KEY_WARNING, c.security_bits);
                }
                Some(Arc::new(kp))
            }
            _ => None,
        };
        Ok(RunState {
            round: 0,
            model: GradientVector::zeros(task.model_dim()),
            task: Arc::new(task),
            keys,
            network: Arc::new(sync::static_samples(&scenario.platforms)),
        })
    }

    pub fn with_network_trace(mut self, samples: Vec<NetworkSample>) -> RunState {
        self.network = Arc::new(samples);
        self
    }
}

/// One row of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub mode: Mode,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub leakage_rate: Option<f64>,
    pub mean_reconstruction_error: Option<f64>,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub encrypt_ops: u64,
    pub decrypt_ops: u64,
    pub homomorphic_ops: u64,
    pub wall_clock_ms: f64,
    pub total_delay_s: Option<f64>,
    pub weighted_sync_delay_s: Option<f64>,
    pub sync_weights: Option<Vec<f64>>,
    pub mix_weights: Option<Vec<f64>>,
    /// Largest per-coordinate gap between the decrypted aggregate and the
    /// same aggregate computed in the clear (encrypted modes only).
    pub shadow_deviation: Option<f64>,
    pub model: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CryptoInfo {
    pub security_bits: u32,
    pub key_id: String,
    pub ciphertext_bytes: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub mean_leakage_rate: Option<f64>,
    pub total_upload_bytes: u64,
    pub total_download_bytes: u64,
    pub total_ops: OpCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub crypto: Option<CryptoInfo>,
    pub rounds: Vec<RoundReport>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct Aggregated {
    update: GradientVector,
    shadow_deviation: Option<f64>,
    mix: Option<Vec<f64>>,
}

/// Advance one round.
pub fn run_round(
    scenario: &Scenario,
    state: &RunState,
    opts: &RunOptions,
) -> Result<(RunState, RoundTranscript, RoundReport)> {
    match opts.workers.or(scenario.workers) {
        Some(w) => he::with_workers(w, || round_inner(scenario, state, opts))?,
        None => round_inner(scenario, state, opts),
    }
}

fn round_inner(
    scenario: &Scenario,
    state: &RunState,
    opts: &RunOptions,
) -> Result<(RunState, RoundTranscript, RoundReport)> {
    let started = Instant::now();
    let round = state.round;
    let task = &state.task;
    let spec = &scenario.task;
    let mut transcript = RoundTranscript::new(round, scenario.mode);
    let ops = OpCounter::new();

    let agg = if scenario.mode == Mode::Centralized {
        let t = Instant::now();
        let (update, _) = local_train(
            task.kind,
            &task.pooled(),
            &state.model,
            spec.local_epochs,
            spec.learning_rate,
        )?;
        transcript.timings.local_train_ms = ms_since(t);
        Aggregated {
            update,
            shadow_deviation: None,
            mix: None,
        }
    } else {
        let t = Instant::now();
        let trained: Vec<(GradientVector, f64)> = task
            .clients
            .par_iter()
            .map(|data| local_train(task.kind, data, &state.model, spec.local_epochs, spec.learning_rate))
            .collect::<Result<_>>()?;
        transcript.timings.local_train_ms = ms_since(t);
        federated_round(scenario, state, &trained, &mut transcript, &ops)?
    };

    let mut model = state.model.clone();
    model.add_assign(&agg.update)?;
    transcript.ops = ops.snapshot();

    let mut weighted_delay = None;
    let mut sync_weights = None;
    if scenario.mode.is_federated() {
        let platforms = platform_payloads(&scenario.platforms, &transcript, scenario.n_clients);
        let weights = if scenario.mode == Mode::Ours {
            sync::derive_sync_weights(&platforms, &state.network, &WeightPolicy::default())?
        } else {
            sync::SyncWeights::uniform(platforms.iter().map(|p| p.platform_id.clone()).collect())
        };
        let plan = sync::SyncPlan {
            total_delay_s: sync::total_delay(&platforms)?,
            weighted_sync_delay_s: sync::weighted_sync_delay(&platforms, &weights)?,
            weights,
            mean_jitter_ms: Default::default(),
        };
        if scenario.mode == Mode::Ours {
            weighted_delay = Some(plan.weighted_sync_delay_s);
            sync_weights = Some(plan.weights.weights.clone());
        }
        transcript.sync = Some(plan);
    }
    transcript.timings.total_ms = ms_since(started);

    let leakage = metrics::leakage_supported(task)
        .then(|| metrics::leakage_rate(&transcript, task))
        .transpose()?;

    let pooled = task.pooled();
    let report = RoundReport {
        round,
        mode: scenario.mode,
        train_loss: task::loss(task.kind, &pooled, &model),
        train_accuracy: task::accuracy(task.kind, &pooled, &model),
        leakage_rate: leakage.as_ref().map(|l| l.reconstructed_fraction),
        mean_reconstruction_error: leakage.as_ref().map(|l| l.mean_reconstruction_error),
        upload_bytes: transcript.upload_bytes(),
        download_bytes: transcript.download_bytes(),
        encrypt_ops: transcript.ops.encrypt,
        decrypt_ops: transcript.ops.decrypt,
        homomorphic_ops: transcript.ops.homomorphic(),
        wall_clock_ms: if opts.record_timings {
            transcript.timings.total_ms
        } else {
            0.0
        },
        total_delay_s: transcript.sync.as_ref().map(|s| s.total_delay_s),
        weighted_sync_delay_s: weighted_delay,
        sync_weights,
        mix_weights: agg.mix,
        shadow_deviation: agg.shadow_deviation,
        model: model.0.clone(),
    };
    let next = RunState {
        round: round + 1,
        model,
        ..state.clone()
    };
    Ok((next, transcript, report))
}

fn plain_mean(updates: &[GradientVector]) -> Result<GradientVector> {
    let weighted: Vec<(f64, GradientVector)> = updates.iter().map(|u| (1.0, u.clone())).collect();
    weighted_global_update(&weighted)
}

fn federated_round(
    scenario: &Scenario,
    state: &RunState,
    trained: &[(GradientVector, f64)],
    transcript: &mut RoundTranscript,
    ops: &OpCounter,
) -> Result<Aggregated> {
    let round = state.round;
    let k = trained.len();
    let updates: Vec<GradientVector> = trained.iter().map(|(u, _)| u.clone()).collect();
    let up = |i: usize| (Party::Client(i as u32), Party::Server);
    let down = |i: usize| (Party::Server, Party::Client(i as u32));

    match scenario.mode {
        Mode::Fl | Mode::DpFl => {
            let t = Instant::now();
            let (tag, sent): (PayloadTag, Vec<GradientVector>) = match &scenario.dp {
                Some(dp) if scenario.mode == Mode::DpFl => (
                    PayloadTag::Noised,
                    updates
                        .par_iter()
                        .enumerate()
                        .map(|(i, u)| {
                            let mut r = rng::stream(
                                rng::child_seed(scenario.seed, round as u64, i as u64),
                                Purpose::DpNoise,
                                0,
                            );
                            dp::privatize(u, dp, &mut r)
                        })
                        .collect(),
                ),
                _ => (PayloadTag::Plaintext, updates.clone()),
            };
            for (i, u) in sent.iter().enumerate() {
                let (from, to) = up(i);
                transcript.push(from, to, tag, PayloadKind::Update, u.to_wire(round));
            }
            transcript.timings.protect_ms = ms_since(t);

            // the server works from what it received
            let t = Instant::now();
            let received: Vec<GradientVector> = transcript
                .payloads
                .iter()
                .filter(|p| p.is_upload() && p.kind == PayloadKind::Update)
                .map(|p| GradientVector::from_wire(&p.bytes).map(|(v, _)| v))
                .collect::<Result<_>>()?;
            let update = plain_mean(&received)?;
            transcript.timings.aggregate_ms = ms_since(t);

            let mut new_model = state.model.clone();
            new_model.add_assign(&update)?;
            let wire = new_model.to_wire(round);
            for i in 0..k {
                let (from, to) = down(i);
                transcript.push(from, to, PayloadTag::Plaintext, PayloadKind::GlobalModel, wire.clone());
            }
            Ok(Aggregated {
                update,
                shadow_deviation: None,
                mix: None,
            })
        }
        Mode::HeFl | Mode::Ours => {
            let crypto = scenario
                .crypto
                .as_ref()
                .ok_or_else(|| Error::config("crypto", "required for encrypted modes"))?;
            let keys = state
                .keys
                .as_ref()
                .ok_or_else(|| Error::config("crypto", "key pair not initialized"))?;
            let pk = &keys.public;
            let codec = crypto.codec();
            let block = crypto.block_spec(state.model.dim())?;

            let mut mix = None;
            if scenario.mode == Mode::Ours {
                let weighting = scenario.weighting.unwrap_or_default();
                let metas: Vec<ClientMeta> = trained
                    .iter()
                    .enumerate()
                    .map(|(i, (_, loss))| ClientMeta {
                        client_id: format!("client-{i}"),
                        loss: *loss,
                        data_size: state.task.clients[i].len() as u64,
                        bandwidth: client_platform(&scenario.platforms, i).bandwidth_mbps * 8.0,
                    })
                    .collect();
                for (i, m) in metas.iter().enumerate() {
                    let (from, to) = up(i);
                    transcript.push(
                        from,
                        to,
                        PayloadTag::Metadata,
                        PayloadKind::ClientMeta,
                        transcript::encode_meta(i as u32, m),
                    );
                }
                let (w, fell_back) = mix_weights(&metas, &weighting)?;
                if fell_back {
                    log::warn!("round {round}: degenerate client weights, using uniform mix");
                }
                for (i, &m) in w.iter().enumerate() {
                    let (from, to) = down(i);
                    transcript.push(
                        from,
                        to,
                        PayloadTag::Metadata,
                        PayloadKind::MixWeight,
                        transcript::encode_mix(i as u32, m),
                    );
                }
                mix = Some(w);
            }

            let t = Instant::now();
            let protected: Vec<(CipherVector, Option<CipherVector>)> = updates
                .par_iter()
                .enumerate()
                .map(|(i, u)| {
                    let seed = rng::child_seed(scenario.seed, round as u64, i as u64);
                    let enc = encrypt_vector_blocked(pk, u, &codec, block, seed)?;
                    ops.encrypted(enc.dim() as u64);
                    let comp = match &mix {
                        Some(w) => {
                            let c = encrypt_complement(pk, u, w[i], &codec, block, seed ^ COMPLEMENT_SALT)?;
                            ops.encrypted(c.dim() as u64);
                            Some(c)
                        }
                        None => None,
                    };
                    Ok((enc, comp))
                })
                .collect::<Result<_>>()?;
            for (i, (enc, comp)) in protected.iter().enumerate() {
                let (from, to) = up(i);
                transcript.push(from, to, PayloadTag::Ciphertext, PayloadKind::Update, enc.to_bytes(pk)?);
                if let Some(c) = comp {
                    transcript.push(from, to, PayloadTag::Ciphertext, PayloadKind::Complement, c.to_bytes(pk)?);
                }
            }
            transcript.timings.protect_ms = ms_since(t);

            // server side: parse uploads, aggregate without the secret key
            let t = Instant::now();
            let parse = |kind: PayloadKind| -> Result<Vec<CipherVector>> {
                transcript
                    .payloads
                    .iter()
                    .filter(|p| p.is_upload() && p.kind == kind)
                    .map(|p| CipherVector::from_bytes(&p.bytes, pk, codec, block))
                    .collect()
            };
            let enc_updates = parse(PayloadKind::Update)?;
            let summed = match &mix {
                None => encrypted_aggregate(pk, &enc_updates, ops)?,
                Some(w) => {
                    let pairs: Vec<(CipherVector, CipherVector)> =
                        enc_updates.into_iter().zip(parse(PayloadKind::Complement)?).collect();
                    hybrid_aggregate(pk, &pairs, w, ops)?
                }
            };
            let wire = summed.to_bytes(pk)?;
            transcript.timings.aggregate_ms = ms_since(t);
            for i in 0..k {
                let (from, to) = down(i);
                transcript.push(from, to, PayloadTag::Ciphertext, PayloadKind::GlobalModel, wire.clone());
            }

            // every client decrypts its own copy
            let t = Instant::now();
            let decrypted: Vec<GradientVector> = (0..k)
                .into_par_iter()
                .map(|_| {
                    let cv = CipherVector::from_bytes(&wire, pk, codec, block)?;
                    if mix.is_some() {
                        finalize_hybrid(&keys.secret, &cv, k, ops)
                    } else {
                        finalize_mean(&keys.secret, &cv, k, ops)
                    }
                })
                .collect::<Result<_>>()?;
            transcript.timings.finalize_ms = ms_since(t);
            let update = decrypted[0].clone();
            debug_assert!(decrypted.iter().all(|d| d == &update));

            let shadow = plain_mean(&updates)?;
            Ok(Aggregated {
                shadow_deviation: Some(update.max_abs_diff(&shadow)),
                update,
                mix,
            })
        }
        Mode::Centralized => unreachable!("handled by caller"),
    }
}

fn client_platform(platforms: &[CloudPlatform], client: usize) -> &CloudPlatform {
    &platforms[client % platforms.len()]
}

/// Platforms with `payload_MB` set to the bytes their clients moved this round.
fn platform_payloads(platforms: &[CloudPlatform], t: &RoundTranscript, n_clients: usize) -> Vec<CloudPlatform> {
    let mut bytes = vec![0u64; platforms.len()];
    for p in &t.payloads {
        let client = match (p.from, p.to) {
            (Party::Client(c), _) | (_, Party::Client(c)) => c as usize,
            _ => continue,
        };
        if client < n_clients {
            bytes[client % platforms.len()] += p.len() as u64;
        }
    }
    platforms
        .iter()
        .zip(bytes)
        .map(|(p, b)| CloudPlatform {
            payload_mb: b as f64 / 1e6,
            ..p.clone()
        })
        .collect()
}

/// A full run that keeps transcripts alongside the report.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub transcripts: Vec<RoundTranscript>,
    pub task: Arc<SyntheticTask>,
}

pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentReport> {
    Ok(run_experiment_with(scenario, &RunOptions::default(), None)?.report)
}

pub fn run_experiment_with(
    scenario: &Scenario,
    opts: &RunOptions,
    network: Option<Vec<NetworkSample>>,
) -> Result<ExperimentRun> {
    let mut state = RunState::init(scenario)?;
    if let Some(samples) = network {
        state = state.with_network_trace(samples);
    }
    let crypto = state.keys.as_ref().map(|kp| CryptoInfo {
        security_bits: kp.public.security_bits(),
        key_id: kp.public.fingerprint(),
        ciphertext_bytes: kp.public.ciphertext_bytes(),
        warning: kp.is_toy().then(|| he::TOY_KEY_WARNING.to_string()),
    });
    let task = state.task.clone();
    let mut rounds = Vec::with_capacity(scenario.rounds as usize);
    let mut transcripts = Vec::with_capacity(scenario.rounds as usize);
    for _ in 0..scenario.rounds {
        let (next, transcript, report) = run_round(scenario, &state, opts)?;
        log::info!(
            "{} round {}: loss {:.6} ({:.1} ms)",
            scenario.mode,
            report.round,
            report.train_loss,
            transcript.timings.total_ms
        );
        state = next;
        rounds.push(report);
        transcripts.push(transcript);
    }

    let last = rounds.last().expect("rounds >= 1");
    let leak: Vec<f64> = rounds.iter().filter_map(|r| r.leakage_rate).collect();
    let summary = Summary {
        final_loss: last.train_loss,
        final_accuracy: last.train_accuracy,
        mean_leakage_rate: (!leak.is_empty()).then(|| leak.iter().sum::<f64>() / leak.len() as f64),
        total_upload_bytes: rounds.iter().map(|r| r.upload_bytes).sum(),
        total_download_bytes: rounds.iter().map(|r| r.download_bytes).sum(),
        total_ops: transcripts.iter().fold(OpCounts::default(), |a, t| a + t.ops),
    };
    Ok(ExperimentRun {
        report: ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: scenario.clone(),
            crypto,
            rounds,
            summary,
        },
        transcripts,
        task,
    })
}
