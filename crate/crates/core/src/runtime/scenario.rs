use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::TaskSpec;
use crate::aggregation::WeightParams;
use crate::error::{Error, Result};
use crate::he::{BlockSpec, FixedPointCodec};
use crate::sync::CloudPlatform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Fl,
    HeFl,
    DpFl,
    Ours,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Centralized, Mode::Fl, Mode::HeFl, Mode::DpFl, Mode::Ours];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Fl => "fl",
            Mode::HeFl => "he_fl",
            Mode::DpFl => "dp_fl",
            Mode::Ours => "ours",
        }
    }

    pub fn is_encrypted(&self) -> bool {
        matches!(self, Mode::HeFl | Mode::Ours)
    }

    pub fn is_federated(&self) -> bool {
        !matches!(self, Mode::Centralized)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoSpec {
    #[serde(default = "default_security_bits")]
    pub security_bits: u32,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    #[serde(default = "default_int_bits")]
    pub int_bits: u32,
    #[serde(default = "default_clip_bound")]
    pub clip_bound: f64,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
}

fn default_security_bits() -> u32 {
    64
}
fn default_frac_bits() -> u32 {
    FixedPointCodec::default().frac_bits
}
fn default_int_bits() -> u32 {
    FixedPointCodec::default().int_bits
}
fn default_clip_bound() -> f64 {
    FixedPointCodec::default().clip_bound
}
fn default_n_blocks() -> usize {
    1
}

impl Default for CryptoSpec {
    fn default() -> Self {
        CryptoSpec {
            security_bits: default_security_bits(),
            frac_bits: default_frac_bits(),
            int_bits: default_int_bits(),
            clip_bound: default_clip_bound(),
            n_blocks: default_n_blocks(),
        }
    }
}

impl CryptoSpec {
    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec {
            frac_bits: self.frac_bits,
            int_bits: self.int_bits,
            clip_bound: self.clip_bound,
        }
    }

    pub fn block_spec(&self, dim: usize) -> Result<BlockSpec> {
        BlockSpec::for_dim(dim, self.n_blocks).map_err(|_| Error::config("crypto.n_blocks", "must be positive"))
    }
}

/// Local differential privacy: clip each update to L2 norm `clip`, then add
/// spherical Gaussian noise with std `noise_multiplier * clip`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSpec {
    pub noise_multiplier: f64,
    pub clip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    pub n_clients: usize,
    pub rounds: u32,
    pub task: TaskSpec,
    /// Required by `he_fl` and `ours`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crypto: Option<CryptoSpec>,
    /// Required by `ours`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<WeightParams>,
    /// Required by `dp_fl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpSpec>,
    /// Clients are assigned round-robin. Defaults to one platform.
    #[serde(default = "default_platforms")]
    pub platforms: Vec<CloudPlatform>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

pub fn default_platforms() -> Vec<CloudPlatform> {
    vec![CloudPlatform {
        platform_id: "cloud-0".into(),
        sync_latency_s: 0.05,
        bandwidth_mbps: 100.0,
        payload_mb: 0.0,
        load_factor: 0.0,
    }]
}

fn require<T>(field: &str, section: &Option<T>, needed: bool, mode: Mode) -> Result<()> {
    match (section.is_some(), needed) {
        (false, true) => Err(Error::config(field, format!("required for mode `{mode}`"))),
        (true, false) => Err(Error::config(field, format!("not used by mode `{mode}`"))),
        _ => Ok(()),
    }
}

impl Scenario {
    /// A scenario with every mode-specific section required by `mode`
    /// filled with defaults.
    pub fn new(mode: Mode, n_clients: usize, rounds: u32, task: TaskSpec, seed: u64) -> Scenario {
        Scenario {
            mode,
            n_clients,
            rounds,
            task,
            crypto: None,
            weighting: None,
            dp: None,
            platforms: default_platforms(),
            seed,
            workers: None,
        }
        .with_mode(mode)
    }

    /// Switch mode, adding default sections the new mode needs and dropping
    /// the ones it does not use.
    pub fn with_mode(mut self, mode: Mode) -> Scenario {
        self.mode = mode;
        self.crypto = mode
            .is_encrypted()
            .then(|| self.crypto.unwrap_or_default());
        self.weighting = (mode == Mode::Ours).then(|| self.weighting.unwrap_or_default());
        self.dp = (mode == Mode::DpFl).then(|| {
            self.dp.unwrap_or(DpSpec {
                noise_multiplier: 1.0,
                clip: 1.0,
            })
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("n_clients", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        self.task.validate()?;
        require("crypto", &self.crypto, self.mode.is_encrypted(), self.mode)?;
        require("weighting", &self.weighting, self.mode == Mode::Ours, self.mode)?;
        require("dp", &self.dp, self.mode == Mode::DpFl, self.mode)?;
        if let Some(c) = &self.crypto {
            c.codec().validate()?;
            if c.n_blocks == 0 {
                return Err(Error::config("crypto.n_blocks", "must be positive"));
            }
        }
        if let Some(w) = &self.weighting {
            w.validate()?;
        }
        if let Some(dp) = &self.dp {
            if !(dp.noise_multiplier.is_finite() && dp.noise_multiplier >= 0.0) {
                return Err(Error::config("dp.noise_multiplier", "must be finite and >= 0"));
            }
            if !(dp.clip.is_finite() && dp.clip > 0.0) {
                return Err(Error::config("dp.clip", "must be positive"));
            }
        }
        if self.platforms.is_empty() {
            return Err(Error::config("platforms", "at least one platform required"));
        }
        for p in &self.platforms {
            p.validate()?;
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be positive"));
        }
        Ok(())
    }

    /// Parse JSON or TOML (by extension). Errors name the offending key.
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        let scenario = if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)?
        } else {
            Self::from_json(&text)?
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })
    }
}
