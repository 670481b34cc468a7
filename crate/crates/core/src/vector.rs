use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLAIN_MAGIC: [u8; 4] = *b"FCPV";
/// magic (4) + dim (u32) + round (u32)
pub const PLAIN_HEADER_BYTES: usize = 12;

/// Real-valued model parameters or model updates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(dim: usize) -> Self {
        GradientVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &GradientVector) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> GradientVector {
        GradientVector(self.0.iter().map(|x| x * k).collect())
    }

    pub fn max_abs_diff(&self, other: &GradientVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Plaintext wire layout: 12-byte header then little-endian f64s.
    pub fn to_wire(&self, round: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(plain_wire_len(self.dim()));
        out.extend_from_slice(&PLAIN_MAGIC);
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&round.to_le_bytes());
        for x in &self.0 {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Parse the plaintext layout, returning the vector and its round tag.
    pub fn from_wire(bytes: &[u8]) -> Result<(GradientVector, u32)> {
        if bytes.len() < PLAIN_HEADER_BYTES || bytes[..4] != PLAIN_MAGIC {
            return Err(Error::Wire("missing plaintext vector header".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let round = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if bytes.len() != plain_wire_len(dim) {
            return Err(Error::Wire(format!(
                "expected {} bytes for dim {dim}, got {}",
                plain_wire_len(dim),
                bytes.len()
            )));
        }
        let v = bytes[PLAIN_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((GradientVector(v), round))
    }
}

pub fn plain_wire_len(dim: usize) -> usize {
    PLAIN_HEADER_BYTES + 8 * dim
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

impl From<Vec<f64>> for GradientVector {
    fn from(v: Vec<f64>) -> Self {
        GradientVector(v)
    }
}

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradientVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
