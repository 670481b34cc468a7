//! Everything put on the wire in a round, byte for byte.

use serde::{Deserialize, Serialize};

use super::scenario::Mode;
use crate::aggregation::ClientMeta;
use crate::error::{Error, Result};
use crate::ops::OpCounts;
use crate::sync::SyncPlan;

/// client index (u32) + loss (f64) + data size (u64) + bandwidth (f64)
pub const META_WIRE_BYTES: usize = 28;
/// client index (u32) + mix weight (f64)
pub const MIX_WIRE_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Client(u32),
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadTag {
    Plaintext,
    Ciphertext,
    Noised,
    /// Scalar bookkeeping (losses, sizes, mix weights), never model vectors.
    Metadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// A client's model update.
    Update,
    /// Encrypted `(1 - mix) * update` term of the hybrid rule.
    Complement,
    ClientMeta,
    MixWeight,
    /// New global model, or its encrypted aggregate.
    GlobalModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub from: Party,
    pub to: Party,
    pub tag: PayloadTag,
    pub kind: PayloadKind,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

impl Payload {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn is_upload(&self) -> bool {
        matches!((self.from, self.to), (Party::Client(_), Party::Server))
    }

    pub fn is_download(&self) -> bool {
        matches!((self.from, self.to), (Party::Server, Party::Client(_)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTimings {
    pub local_train_ms: f64,
    pub protect_ms: f64,
    pub aggregate_ms: f64,
    pub finalize_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: u32,
    pub mode: Mode,
    pub payloads: Vec<Payload>,
    pub ops: OpCounts,
    pub timings: RoundTimings,
    pub sync: Option<SyncPlan>,
}

impl RoundTranscript {
    pub fn new(round: u32, mode: Mode) -> Self {
        RoundTranscript {
            round,
            mode,
            payloads: Vec::new(),
            ops: OpCounts::default(),
            timings: RoundTimings::default(),
            sync: None,
        }
    }

    pub fn push(&mut self, from: Party, to: Party, tag: PayloadTag, kind: PayloadKind, bytes: Vec<u8>) {
        self.payloads.push(Payload {
            from,
            to,
            tag,
            kind,
            bytes,
        });
    }

    pub fn upload_bytes(&self) -> u64 {
        self.payloads.iter().filter(|p| p.is_upload()).map(|p| p.len() as u64).sum()
    }

    pub fn download_bytes(&self) -> u64 {
        self.payloads.iter().filter(|p| p.is_download()).map(|p| p.len() as u64).sum()
    }

    pub fn count_tag(&self, tag: PayloadTag) -> usize {
        self.payloads.iter().filter(|p| p.tag == tag).count()
    }
}

pub fn encode_meta(index: u32, meta: &ClientMeta) -> Vec<u8> {
    let mut out = Vec::with_capacity(META_WIRE_BYTES);
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&meta.loss.to_le_bytes());
    out.extend_from_slice(&meta.data_size.to_le_bytes());
    out.extend_from_slice(&meta.bandwidth.to_le_bytes());
    out
}

pub fn decode_meta(bytes: &[u8]) -> Result<(u32, ClientMeta)> {
    if bytes.len() != META_WIRE_BYTES {
        return Err(Error::Wire(format!("client meta must be {META_WIRE_BYTES} bytes")));
    }
    let index = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    Ok((
        index,
        ClientMeta {
            client_id: format!("client-{index}"),
            loss: f64::from_le_bytes(bytes[4..12].try_into().unwrap()),
            data_size: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            bandwidth: f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        },
    ))
}

pub fn encode_mix(index: u32, mix: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(MIX_WIRE_BYTES);
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&mix.to_le_bytes());
    out
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
