//! Server-side aggregation rules.
//!
//! * encrypted mean: homomorphic sum, one decryption, division by `K` in the clear
//! * dynamic client weights from loss, data size and bandwidth
//! * weighted global update over plaintext vectors
//! * hybrid update mixing a scaled encrypted term with an encrypted
//!   complementary term, kept in the ciphertext domain until one decryption

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::he::{
    decode_scaled, decrypt_raw, encrypt_vector_blocked, BlockSpec, CipherVector, Ciphertext,
    FixedPointCodec, PublicKey, SecretKey,
};
use crate::ops::OpCounter;
use crate::vector::{check_dim, GradientVector};

/// Guard against zero loss in [`WeightMode::InverseLoss`].
pub const INVERSE_LOSS_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMeta {
    pub client_id: String,
    /// Local training loss after the round.
    pub loss: f64,
    /// Number of local samples, at least 1.
    pub data_size: u64,
    /// Uplink bandwidth in megabits per second.
    pub bandwidth: f64,
}

impl ClientMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss.is_finite() && self.loss >= 0.0) {
            return Err(Error::config("loss", format!("{} must be finite and >= 0", self.loss)));
        }
        if self.data_size == 0 {
            return Err(Error::config("data_size", "must be at least 1"));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::config("bandwidth", format!("{} must be > 0", self.bandwidth)));
        }
        Ok(())
    }
}

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub meta: ClientMeta,
    pub plain_update: Option<GradientVector>,
    pub cipher_update: Option<CipherVector>,
    pub upload_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `loss / (data_size * bandwidth^alpha)`
    #[default]
    FormulaAsWritten,
    /// `1 / ((loss + eps) * data_size * bandwidth^alpha)`
    InverseLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub alpha: f64,
    #[serde(default)]
    pub mode: WeightMode,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            alpha: 0.5,
            mode: WeightMode::FormulaAsWritten,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("weighting.alpha", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub weights: GradientVector,
    pub round: u32,
}

fn check_compatible(first: &CipherVector, other: &CipherVector) -> Result<()> {
    check_dim(first.dim(), other.dim())?;
    if first.key_id() != other.key_id() {
        return Err(Error::KeyMismatch {
            expected: first.key_id(),
            found: other.key_id(),
        });
    }
    if first.codec() != other.codec() {
        return Err(Error::CodecMismatch);
    }
    Ok(())
}

/// Coordinate-wise homomorphic sum of the client vectors.
pub fn encrypted_aggregate(
    pk: &PublicKey,
    updates: &[CipherVector],
    ops: &OpCounter,
) -> Result<CipherVector> {
    let (first, rest) = updates
        .split_first()
        .ok_or(Error::Empty("no encrypted updates to aggregate"))?;
    for u in rest {
        check_compatible(first, u)?;
    }
    let columns: Vec<Vec<Ciphertext>> = updates.iter().map(CipherVector::to_flat).collect();
    let summed: Vec<Ciphertext> = (0..first.dim())
        .into_par_iter()
        .map(|j| {
            let mut acc = columns[0][j].clone();
            for col in &columns[1..] {
                acc = pk.add(&acc, &col[j])?;
                ops.added(1);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    CipherVector::from_flat(summed, first.block_spec(), *first.codec(), first.key_id())
}

/// Decrypt an aggregated sum and divide by the client count.
pub fn finalize_mean(
    sk: &SecretKey,
    summed: &CipherVector,
    n_clients: usize,
    ops: &OpCounter,
) -> Result<GradientVector> {
    if n_clients == 0 {
        return Err(Error::Empty("client count must be positive"));
    }
    let raw = decrypt_raw(sk, summed)?;
    ops.decrypted(raw.len() as u64);
    let n = sk.public().modulus();
    let k = n_clients as f64;
    Ok(GradientVector(
        raw.iter()
            .map(|m| summed.codec().decode(m, n) / k)
            .collect(),
    ))
}

/// Dynamic weight of one client.
pub fn client_weight(meta: &ClientMeta, params: &WeightParams) -> f64 {
    let denom = meta.data_size as f64 * meta.bandwidth.powf(params.alpha);
    match params.mode {
        WeightMode::FormulaAsWritten => meta.loss / denom,
        WeightMode::InverseLoss => 1.0 / ((meta.loss + INVERSE_LOSS_EPSILON) * denom),
    }
}

/// `sum(w_k * u_k) / sum(w_k)`, coordinate-wise.
pub fn weighted_global_update(updates: &[(f64, GradientVector)]) -> Result<GradientVector> {
    let (first, _) = updates
        .split_first()
        .ok_or(Error::Empty("no updates to aggregate"))?;
    let dim = first.1.dim();
    let mut total = 0.0;
    for (i, (w, u)) in updates.iter().enumerate() {
        check_dim(dim, u.dim())?;
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::config(
                format!("weights[{i}]"),
                format!("{w} must be finite and >= 0"),
            ));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mut out = vec![0.0; dim];
    for (w, u) in updates {
        let share = w / total;
        for (o, x) in out.iter_mut().zip(u.iter()) {
            *o += share * x;
        }
    }
    Ok(GradientVector(out))
}

/// Mix weights in `[0, 1]` derived from the dynamic client weights, scaled
/// so the largest is 1. The flag is set when every raw weight was zero and
/// uniform weights were substituted.
pub fn mix_weights(metas: &[ClientMeta], params: &WeightParams) -> Result<(Vec<f64>, bool)> {
    if metas.is_empty() {
        return Err(Error::Empty("no clients"));
    }
    let raw: Vec<f64> = metas
        .iter()
        .map(|m| m.validate().map(|_| client_weight(m, params)))
        .collect::<Result<_>>()?;
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if !(max.is_finite() && max > 0.0) {
        log::warn!("all client weights are zero; falling back to uniform weights");
        return Ok((vec![1.0; metas.len()], true));
    }
    Ok((raw.iter().map(|w| (w / max).clamp(0.0, 1.0)).collect(), false))
}

/// `round(mix * 2^frac_bits)` as a homomorphic scalar.
pub fn mix_scalar(mix: f64, codec: &FixedPointCodec) -> BigUint {
    BigUint::from((mix * (codec.frac_bits as f64).exp2()).round() as u64)
}

fn check_mix(index: usize, mix: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::MixWeightOutOfRange { index, value: mix });
    }
    Ok(())
}

/// Client side of the hybrid rule: encrypt `(1 - mix) * update`.
pub fn encrypt_complement(
    pk: &PublicKey,
    update: &GradientVector,
    mix: f64,
    codec: &FixedPointCodec,
    spec: BlockSpec,
    seed: u64,
) -> Result<CipherVector> {
    check_mix(0, mix)?;
    encrypt_vector_blocked(pk, &update.scaled(1.0 - mix), codec, spec, seed)
}

/// Server side of the hybrid rule.
///
/// For each client `k` and coordinate `j` computes
/// `s_k · E(w_kj) ⊕ 2^f · E((1 - mix_k) w_kj)` with `s_k = round(mix_k 2^f)`,
/// then sums over clients. The result carries `2 * frac_bits` fractional
/// bits; see [`finalize_hybrid`].
pub fn hybrid_aggregate(
    pk: &PublicKey,
    contributions: &[(CipherVector, CipherVector)],
    mix: &[f64],
    ops: &OpCounter,
) -> Result<CipherVector> {
    if contributions.is_empty() {
        return Err(Error::Empty("no hybrid contributions"));
    }
    if contributions.len() != mix.len() {
        return Err(Error::DimensionMismatch {
            expected: contributions.len(),
            found: mix.len(),
        });
    }
    for (i, &m) in mix.iter().enumerate() {
        check_mix(i, m)?;
    }
    let first = &contributions[0].0;
    for (a, b) in contributions {
        check_compatible(first, a)?;
        check_compatible(first, b)?;
    }
    let codec = *first.codec();
    let unit = mix_scalar(1.0, &codec);
    let scalars: Vec<BigUint> = mix.iter().map(|&m| mix_scalar(m, &codec)).collect();
    let columns: Vec<(Vec<Ciphertext>, Vec<Ciphertext>)> = contributions
        .iter()
        .map(|(a, b)| (a.to_flat(), b.to_flat()))
        .collect();

    let summed: Vec<Ciphertext> = (0..first.dim())
        .into_par_iter()
        .map(|j| {
            let mut acc: Option<Ciphertext> = None;
            for ((enc, comp), s) in columns.iter().zip(&scalars) {
                let weighted = pk.scale(&enc[j], s)?;
                let lifted = pk.scale(&comp[j], &unit)?;
                ops.scaled(2);
                let term = pk.add(&weighted, &lifted)?;
                ops.added(1);
                acc = Some(match acc {
                    None => term,
                    Some(a) => {
                        ops.added(1);
                        pk.add(&a, &term)?
                    }
                });
            }
            Ok(acc.expect("at least one contribution"))
        })
        .collect::<Result<_>>()?;
    CipherVector::from_flat(summed, first.block_spec(), codec, first.key_id())
}

/// Decrypt a hybrid sum and divide by the denominator, which is exactly the
/// client count because `mix + (1 - mix) = 1` for every client.
pub fn finalize_hybrid(
    sk: &SecretKey,
    summed: &CipherVector,
    n_clients: usize,
    ops: &OpCounter,
) -> Result<GradientVector> {
    if n_clients == 0 {
        return Err(Error::Empty("client count must be positive"));
    }
    let raw = decrypt_raw(sk, summed)?;
    ops.decrypted(raw.len() as u64);
    let n = sk.public().modulus();
    let scale_bits = 2 * summed.codec().frac_bits;
    let k = n_clients as f64;
    Ok(GradientVector(
        raw.iter().map(|m| decode_scaled(m, n, scale_bits) / k).collect(),
    ))
}

/// Full hybrid round over updates carrying both an encrypted and a plain
/// part. The plain part is encrypted here before it enters the sum.
pub fn hybrid_update(
    sk: &SecretKey,
    updates: &[ClientUpdate],
    mix: &[f64],
    round: u32,
    seed: u64,
    ops: &OpCounter,
) -> Result<GlobalModel> {
    let pk = sk.public();
    let mut contributions = Vec::with_capacity(updates.len());
    for (i, u) in updates.iter().enumerate() {
        let enc = u.cipher_update.as_ref().ok_or(Error::MissingUpdatePart {
            index: i,
            part: "encrypted",
        })?;
        let plain = u.plain_update.as_ref().ok_or(Error::MissingUpdatePart {
            index: i,
            part: "plain",
        })?;
        let m = *mix.get(i).ok_or(Error::DimensionMismatch {
            expected: updates.len(),
            found: mix.len(),
        })?;
        check_mix(i, m)?;
        check_dim(enc.dim(), plain.dim())?;
        let comp = encrypt_complement(
            pk,
            plain,
            m,
            enc.codec(),
            enc.block_spec(),
            crate::rng::child_seed(seed, round as u64, i as u64),
        )?;
        ops.encrypted(comp.dim() as u64);
        contributions.push((enc.clone(), comp));
    }
    let summed = hybrid_aggregate(pk, &contributions, mix, ops)?;
    let weights = finalize_hybrid(sk, &summed, updates.len(), ops)?;
    Ok(GlobalModel { weights, round })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{keygen, Headroom, KeyPair};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn keys() -> KeyPair {
        keygen(64, Some(Headroom::new(FixedPointCodec::default(), 8)), 17).unwrap()
    }

    fn enc(kp: &KeyPair, v: &[f64], seed: u64) -> CipherVector {
        encrypt_vector_blocked(
            &kp.public,
            &GradientVector(v.to_vec()),
            &FixedPointCodec::default(),
            BlockSpec::for_dim(v.len(), 1).unwrap(),
            seed,
        )
        .unwrap()
    }

    fn meta(loss: f64, data_size: u64, bandwidth: f64) -> ClientMeta {
        ClientMeta {
            client_id: "c".into(),
            loss,
            data_size,
            bandwidth,
        }
    }

    fn plain_mean(vs: &[Vec<f64>]) -> Vec<f64> {
        let k = vs.len() as f64;
        (0..vs[0].len())
            .map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / k)
            .collect()
    }

    const RES: f64 = 1.0 / 65536.0;

    #[test]
    fn two_point_encrypted_mean() {
        let kp = keys();
        let ops = OpCounter::new();
        let sum = encrypted_aggregate(&kp.public, &[enc(&kp, &[1.0], 1), enc(&kp, &[3.0], 2)], &ops)
            .unwrap();
        let mean = finalize_mean(&kp.secret, &sum, 2, &ops).unwrap();
        assert!((mean[0] - 2.0).abs() <= RES);
        assert_eq!(ops.snapshot().add, 1);
        assert_eq!(ops.snapshot().decrypt, 1);
    }

    #[test]
    fn single_client_mean_is_identity() {
        let kp = keys();
        let ops = OpCounter::new();
        let v = [0.25, -1.5, 3.0];
        let sum = encrypted_aggregate(&kp.public, &[enc(&kp, &v, 1)], &ops).unwrap();
        let mean = finalize_mean(&kp.secret, &sum, 1, &ops).unwrap();
        assert_eq!(mean.0, v.to_vec());
    }

    #[test]
    fn random_three_client_mean_matches_oracle() {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let vs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let cts: Vec<_> = vs.iter().enumerate().map(|(i, v)| enc(&kp, v, i as u64)).collect();
        let ops = OpCounter::new();
        let mean =
            finalize_mean(&kp.secret, &encrypted_aggregate(&kp.public, &cts, &ops).unwrap(), 3, &ops)
                .unwrap();
        assert!(mean.max_abs_diff(&GradientVector(plain_mean(&vs))) <= RES);
    }

    #[test]
    fn aggregation_input_errors() {
        let kp = keys();
        let ops = OpCounter::new();
        assert!(matches!(
            encrypted_aggregate(&kp.public, &[], &ops),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            encrypted_aggregate(&kp.public, &[enc(&kp, &[1.0], 0), enc(&kp, &[1.0, 2.0], 0)], &ops),
            Err(Error::DimensionMismatch { .. })
        ));
        let other = keygen(64, None, 18).unwrap();
        assert!(matches!(
            encrypted_aggregate(&kp.public, &[enc(&kp, &[1.0], 0), enc(&other, &[1.0], 0)], &ops),
            Err(Error::KeyMismatch { .. })
        ));
    }

    #[test]
    fn client_weight_examples() {
        let p = WeightParams {
            alpha: 0.5,
            mode: WeightMode::FormulaAsWritten,
        };
        assert!((client_weight(&meta(2.0, 100, 4.0), &p) - 0.01).abs() < 1e-15);
        let p0 = WeightParams { alpha: 0.0, ..p };
        assert!((client_weight(&meta(2.0, 100, 4.0), &p0) - 0.02).abs() < 1e-15);
        assert_eq!(
            client_weight(&meta(1.3, 7, 2.0), &p),
            client_weight(&meta(1.3, 7, 2.0), &p)
        );
        let inv = WeightParams {
            alpha: 0.5,
            mode: WeightMode::InverseLoss,
        };
        let w = client_weight(&meta(2.0, 100, 4.0), &inv);
        assert!((w - 1.0 / ((2.0 + 1e-9) * 200.0)).abs() < 1e-15);
        assert!(client_weight(&meta(0.0, 1, 1.0), &inv).is_finite());
    }

    #[test]
    fn formula_weight_monotonicity() {
        let p = WeightParams::default();
        let base = client_weight(&meta(1.0, 10, 2.0), &p);
        assert!(client_weight(&meta(1.5, 10, 2.0), &p) > base);
        assert!(client_weight(&meta(1.0, 11, 2.0), &p) < base);
        assert!(client_weight(&meta(1.0, 10, 3.0), &p) < base);
    }

    #[test]
    fn weighted_update_examples() {
        let g = |v: f64| GradientVector(vec![v]);
        assert_eq!(weighted_global_update(&[(1.0, g(0.0)), (1.0, g(2.0))]).unwrap().0, vec![1.0]);
        assert_eq!(weighted_global_update(&[(1.0, g(0.0)), (3.0, g(4.0))]).unwrap().0, vec![3.0]);
        assert_eq!(weighted_global_update(&[(0.37, g(-5.5))]).unwrap().0, vec![-5.5]);
        assert!(matches!(
            weighted_global_update(&[(0.0, g(1.0)), (0.0, g(2.0))]),
            Err(Error::DegenerateWeights)
        ));
        assert!(weighted_global_update(&[(-1.0, g(1.0)), (2.0, g(2.0))]).is_err());
        assert!(weighted_global_update(&[]).is_err());
    }

    #[test]
    fn mix_weights_fall_back_to_uniform_on_zero_losses() {
        let metas = vec![meta(0.0, 10, 1.0), meta(0.0, 20, 2.0)];
        let (w, fell_back) = mix_weights(&metas, &WeightParams::default()).unwrap();
        assert!(fell_back);
        assert_eq!(w, vec![1.0, 1.0]);

        let metas = vec![meta(1.0, 10, 1.0), meta(2.0, 10, 1.0)];
        let (w, fell_back) = mix_weights(&metas, &WeightParams::default()).unwrap();
        assert!(!fell_back);
        assert_eq!(w, vec![0.5, 1.0]);
    }

    fn hybrid_fixture(kp: &KeyPair, vs: &[Vec<f64>]) -> Vec<ClientUpdate> {
        vs.iter()
            .enumerate()
            .map(|(i, v)| ClientUpdate {
                meta: meta(1.0, 1, 1.0),
                plain_update: Some(GradientVector(v.clone())),
                cipher_update: Some(enc(kp, v, 100 + i as u64)),
                upload_bytes: 0,
            })
            .collect()
    }

    #[test]
    fn hybrid_boundaries() {
        let kp = keys();
        let vs = vec![vec![0.5, -0.25], vec![-1.0, 0.75], vec![0.125, 0.3]];
        let updates = hybrid_fixture(&kp, &vs);
        let ops = OpCounter::new();

        let cts: Vec<_> = updates.iter().map(|u| u.cipher_update.clone().unwrap()).collect();
        let eq3 = finalize_mean(&kp.secret, &encrypted_aggregate(&kp.public, &cts, &ops).unwrap(), 3, &ops)
            .unwrap();
        let all_enc = hybrid_update(&kp.secret, &updates, &[1.0; 3], 0, 1, &ops).unwrap();
        assert!(all_enc.weights.max_abs_diff(&eq3) <= 2.0 * RES);

        let all_plain = hybrid_update(&kp.secret, &updates, &[0.0; 3], 0, 1, &ops).unwrap();
        assert!(all_plain.weights.max_abs_diff(&GradientVector(plain_mean(&vs))) <= 2.0 * RES);
    }

    #[test]
    fn hybrid_random_mix_matches_plain_mean() {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let vs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mix: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
        let updates = hybrid_fixture(&kp, &vs);
        let ops = OpCounter::new();
        let g = hybrid_update(&kp.secret, &updates, &mix, 4, 2, &ops).unwrap();
        // oracle: (1/K) sum(mix_k w_k + (1 - mix_k) w_k)
        let oracle: Vec<f64> = (0..2)
            .map(|j| {
                (0..3)
                    .map(|k| mix[k] * vs[k][j] + (1.0 - mix[k]) * vs[k][j])
                    .sum::<f64>()
                    / 3.0
            })
            .collect();
        assert!(g.weights.max_abs_diff(&GradientVector(oracle)) <= 2.0 * RES);
        assert_eq!(g.round, 4);
        let c = ops.snapshot();
        // 3 complement encryptions of dim 2, (4K - 1) d homomorphic ops, d decryptions
        assert_eq!(c.encrypt, 6);
        assert_eq!(c.homomorphic(), (4 * 3 - 1) * 2);
        assert_eq!(c.scale, 2 * 3 * 2);
        assert_eq!(c.decrypt, 2);
    }

    #[test]
    fn hybrid_input_errors() {
        let kp = keys();
        let mut updates = hybrid_fixture(&kp, &[vec![1.0], vec![2.0]]);
        let ops = OpCounter::new();
        assert!(matches!(
            hybrid_update(&kp.secret, &updates, &[0.5, 1.5], 0, 0, &ops),
            Err(Error::MixWeightOutOfRange { index: 1, .. })
        ));
        updates[1].plain_update = None;
        assert!(matches!(
            hybrid_update(&kp.secret, &updates, &[0.5, 0.5], 0, 0, &ops),
            Err(Error::MissingUpdatePart { index: 1, part: "plain" })
        ));
        updates[0].cipher_update = None;
        assert!(matches!(
            hybrid_update(&kp.secret, &updates, &[0.5, 0.5], 0, 0, &ops),
            Err(Error::MissingUpdatePart { index: 0, part: "encrypted" })
        ));
    }
}
