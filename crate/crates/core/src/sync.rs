//! Cross-cloud synchronization cost model.
//!
//! Total delay of a synchronization pass is the sum over platforms of the
//! platform's sync latency plus its transfer time (payload / bandwidth). The
//! weighted asynchronous delay is a convex combination of the latencies,
//! with weights derived from measured network samples.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latency floor used by the weight policy, in seconds.
pub const MIN_LATENCY_S: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudPlatform {
    pub platform_id: String,
    pub sync_latency_s: f64,
    #[serde(rename = "bandwidth_MBps")]
    pub bandwidth_mbps: f64,
    /// Bytes moved per synchronization, in MB. This is the quantity divided
    /// by bandwidth in the transfer term, so it is modeled as a size rather
    /// than a training time.
    #[serde(rename = "payload_MB", default)]
    pub payload_mb: f64,
    #[serde(default)]
    pub load_factor: f64,
}

impl CloudPlatform {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| {
            Err(Error::config(
                format!("platforms[{}].{field}", self.platform_id),
                why.to_string(),
            ))
        };
        if !(self.bandwidth_mbps.is_finite() && self.bandwidth_mbps > 0.0) {
            return bad("bandwidth_MBps", "must be > 0");
        }
        if !(self.sync_latency_s.is_finite() && self.sync_latency_s >= 0.0) {
            return bad("sync_latency_s", "must be finite and >= 0");
        }
        if !(self.payload_mb.is_finite() && self.payload_mb >= 0.0) {
            return bad("payload_MB", "must be finite and >= 0");
        }
        if !(self.load_factor.is_finite() && self.load_factor >= 0.0) {
            return bad("load_factor", "must be finite and >= 0");
        }
        Ok(())
    }

    pub fn transfer_time_s(&self) -> f64 {
        self.payload_mb / self.bandwidth_mbps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSample {
    pub timestamp_s: f64,
    pub platform_id: String,
    pub latency_ms: f64,
    #[serde(rename = "bandwidth_MBps")]
    pub bandwidth_mbps: f64,
    pub jitter_ms: f64,
}

/// Per-platform weights, in platform order, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncWeights {
    pub platform_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl SyncWeights {
    /// Normalize raw non-negative scores.
    pub fn normalized(platform_ids: Vec<String>, raw: &[f64]) -> Result<SyncWeights> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("sync weights", "must be finite and >= 0"));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        Ok(SyncWeights {
            platform_ids,
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(platform_ids: Vec<String>) -> SyncWeights {
        let n = platform_ids.len();
        SyncWeights {
            platform_ids,
            weights: vec![1.0 / n as f64; n],
        }
    }
}

/// How sync weights are derived from samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPolicy {
    /// Only samples this recent (relative to the newest sample) count.
    pub staleness_window_s: f64,
}

impl Default for WeightPolicy {
    fn default() -> Self {
        WeightPolicy {
            staleness_window_s: 60.0,
        }
    }
}

/// `sum_i (latency_i + payload_i / bandwidth_i)`
pub fn total_delay(platforms: &[CloudPlatform]) -> Result<f64> {
    if platforms.is_empty() {
        return Err(Error::Empty("no cloud platforms"));
    }
    let mut total = 0.0;
    for p in platforms {
        p.validate()?;
        total += p.sync_latency_s + p.transfer_time_s();
    }
    Ok(total)
}

/// `sum_i w_i * latency_i` over the same platforms the weights were built for.
pub fn weighted_sync_delay(platforms: &[CloudPlatform], weights: &SyncWeights) -> Result<f64> {
    if platforms.len() != weights.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: platforms.len(),
            found: weights.weights.len(),
        });
    }
    let sum: f64 = weights.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config("sync weights", format!("sum to {sum}, expected 1")));
    }
    Ok(platforms
        .iter()
        .zip(&weights.weights)
        .map(|(p, w)| w * p.sync_latency_s)
        .sum())
}

/// Weights from recent samples: `bandwidth / (latency * (1 + load))`,
/// normalized. Every platform needs at least one sample inside the window.
pub fn derive_sync_weights(
    platforms: &[CloudPlatform],
    samples: &[NetworkSample],
    policy: &WeightPolicy,
) -> Result<SyncWeights> {
    if platforms.is_empty() {
        return Err(Error::Empty("no cloud platforms"));
    }
    let newest = samples
        .iter()
        .map(|s| s.timestamp_s)
        .fold(f64::NEG_INFINITY, f64::max);
    let cutoff = newest - policy.staleness_window_s;

    let mut raw = Vec::with_capacity(platforms.len());
    let mut stale = Vec::new();
    for p in platforms {
        p.validate()?;
        let recent: Vec<&NetworkSample> = samples
            .iter()
            .filter(|s| s.platform_id == p.platform_id && s.timestamp_s >= cutoff)
            .collect();
        if recent.is_empty() {
            stale.push(p.platform_id.clone());
            continue;
        }
        let k = recent.len() as f64;
        let latency_s = (recent.iter().map(|s| s.latency_ms).sum::<f64>() / k / 1e3).max(MIN_LATENCY_S);
        let bandwidth = recent.iter().map(|s| s.bandwidth_mbps).sum::<f64>() / k;
        raw.push(bandwidth / (latency_s * (1.0 + p.load_factor)));
    }
    if !stale.is_empty() {
        return Err(Error::StaleSamples(stale));
    }
    SyncWeights::normalized(platforms.iter().map(|p| p.platform_id.clone()).collect(), &raw)
}

/// One sample per platform from its configured latency and bandwidth, for
/// runs without a trace file.
pub fn static_samples(platforms: &[CloudPlatform]) -> Vec<NetworkSample> {
    platforms
        .iter()
        .map(|p| NetworkSample {
            timestamp_s: 0.0,
            platform_id: p.platform_id.clone(),
            latency_ms: p.sync_latency_s * 1e3,
            bandwidth_mbps: p.bandwidth_mbps,
            jitter_ms: 0.0,
        })
        .collect()
}

/// Weights and both delay figures for one set of platforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncPlan {
    pub weights: SyncWeights,
    pub total_delay_s: f64,
    pub weighted_sync_delay_s: f64,
    /// Mean jitter per platform over the whole trace, reported only.
    pub mean_jitter_ms: BTreeMap<String, f64>,
}

pub fn plan(
    platforms: &[CloudPlatform],
    samples: &[NetworkSample],
    policy: &WeightPolicy,
) -> Result<SyncPlan> {
    let weights = derive_sync_weights(platforms, samples, policy)?;
    let mut jitter: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let e = jitter.entry(s.platform_id.clone()).or_default();
        e.0 += s.jitter_ms;
        e.1 += 1;
    }
    Ok(SyncPlan {
        total_delay_s: total_delay(platforms)?,
        weighted_sync_delay_s: weighted_sync_delay(platforms, &weights)?,
        weights,
        mean_jitter_ms: jitter
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
    })
}

pub const TRACE_HEADER: [&str; 5] = [
    "timestamp_s",
    "platform_id",
    "latency_ms",
    "bandwidth_MBps",
    "jitter_ms",
];

/// Read a network trace CSV and return its samples stably sorted by time.
pub fn ingest_trace(path: &Path) -> Result<Vec<NetworkSample>> {
    let file = std::fs::File::open(path)?;
    parse_trace(file, path)
}

pub fn parse_trace<R: Read>(reader: R, path: &Path) -> Result<Vec<NetworkSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`", TRACE_HEADER.join(",")),
        ));
    }

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let sample: NetworkSample = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let numeric = [
            ("timestamp_s", sample.timestamp_s),
            ("latency_ms", sample.latency_ms),
            ("bandwidth_MBps", sample.bandwidth_mbps),
            ("jitter_ms", sample.jitter_ms),
        ];
        for (name, v) in numeric {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("{name} = {v} must be finite and non-negative"),
                });
            }
        }
        samples.push(sample);
    }
    samples.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    Ok(samples)
}

#[derive(Deserialize)]
struct PlatformsFile {
    platforms: Vec<CloudPlatform>,
}

/// Platforms from JSON (array or `{"platforms": [...]}`) or TOML
/// (`[[platforms]]` tables), chosen by extension.
pub fn load_platforms(path: &Path) -> Result<Vec<CloudPlatform>> {
    let text = std::fs::read_to_string(path)?;
    let platforms = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str::<PlatformsFile>(&text)
            .map_err(|e| Error::config("platforms", e.to_string()))?
            .platforms
    } else {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.is_array() {
            serde_json::from_value(value)?
        } else {
            serde_json::from_value::<PlatformsFile>(value)?.platforms
        }
    };
    for p in &platforms {
        p.validate()?;
    }
    Ok(platforms)
}
