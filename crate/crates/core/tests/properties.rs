use std::path::Path;

use num_bigint::BigUint;
use proptest::prelude::*;

use fedcloud::aggregation::{client_weight, weighted_global_update, ClientMeta, WeightParams};
use fedcloud::he::{self, FixedPointCodec, KeyPair};
use fedcloud::rng::{self, Purpose};
use fedcloud::sync::{
    derive_sync_weights, parse_trace, total_delay, weighted_sync_delay, CloudPlatform,
    NetworkSample, SyncWeights, WeightPolicy,
};
use fedcloud::GradientVector;

fn key32() -> &'static KeyPair {
    use std::sync::OnceLock;
    static KEY: OnceLock<KeyPair> = OnceLock::new();
    KEY.get_or_init(|| he::keygen(32, None, 7).unwrap())
}

fn platform(i: usize, latency: f64, bandwidth: f64, payload: f64, load: f64) -> CloudPlatform {
    CloudPlatform {
        platform_id: format!("p{i}"),
        sync_latency_s: latency,
        bandwidth_mbps: bandwidth,
        payload_mb: payload,
        load_factor: load,
    }
}

fn platforms() -> impl Strategy<Value = Vec<CloudPlatform>> {
    prop::collection::vec((0.0..5.0f64, 0.1..500.0f64, 0.0..200.0f64, 0.0..3.0f64), 1..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (l, b, p, f))| platform(i, l, b, p, f))
            .collect()
    })
}

fn samples_for(ps: &[CloudPlatform]) -> Vec<NetworkSample> {
    ps.iter()
        .map(|p| NetworkSample {
            timestamp_s: 0.0,
            platform_id: p.platform_id.clone(),
            latency_ms: p.sync_latency_s * 1e3,
            bandwidth_mbps: p.bandwidth_mbps,
            jitter_ms: 0.0,
        })
        .collect()
}

fn weighted_updates() -> impl Strategy<Value = Vec<(f64, GradientVector)>> {
    (1usize..6).prop_flat_map(|dim| {
        prop::collection::vec(
            (0.01..10.0f64, prop::collection::vec(-10.0..10.0f64, dim).prop_map(GradientVector)),
            1..8,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paillier_matches_integer_arithmetic(a in any::<u64>(), b in any::<u64>(), k in any::<u32>(), seed in any::<u64>()) {
        let kp = key32();
        let n = kp.public.modulus();
        let (a, b) = (BigUint::from(a) % n, BigUint::from(b) % n);
        let k = BigUint::from(k);
        let mut r = rng::stream(seed, Purpose::Encryption, 0);
        let ea = kp.public.encrypt(&a, &mut r).unwrap();
        let eb = kp.public.encrypt(&b, &mut r).unwrap();
        prop_assert_eq!(kp.secret.decrypt(&ea).unwrap(), a.clone());
        prop_assert_eq!(kp.secret.decrypt(&kp.public.add(&ea, &eb).unwrap()).unwrap(), (&a + &b) % n);
        prop_assert_eq!(kp.secret.decrypt(&kp.public.scale(&ea, &k).unwrap()).unwrap(), (&a * &k) % n);
    }

    #[test]
    fn codec_round_trip_within_resolution(x in -8.0..8.0f64, f in 8u32..=24) {
        let codec = FixedPointCodec::with_frac_bits(f);
        let n = key32().public.modulus();
        let back = codec.decode(&codec.encode(x, n), n);
        prop_assert!((back - x).abs() <= (-(f as f64)).exp2());
    }

    #[test]
    fn codec_clips_out_of_range(x in 8.0..1e6f64) {
        let codec = FixedPointCodec::default();
        let n = key32().public.modulus();
        prop_assert_eq!(codec.decode(&codec.encode(x, n), n), 8.0);
        prop_assert_eq!(codec.decode(&codec.encode(-x, n), n), -8.0);
    }

    #[test]
    fn equal_weights_give_the_plain_mean(updates in weighted_updates(), w in 0.01..100.0f64) {
        let equal: Vec<_> = updates.iter().map(|(_, u)| (w, u.clone())).collect();
        let got = weighted_global_update(&equal).unwrap();
        let k = updates.len() as f64;
        for j in 0..got.dim() {
            let mean = updates.iter().map(|(_, u)| u[j]).sum::<f64>() / k;
            prop_assert!((got[j] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn weighted_update_is_a_convex_combination(updates in weighted_updates()) {
        let got = weighted_global_update(&updates).unwrap();
        for j in 0..got.dim() {
            let lo = updates.iter().map(|(_, u)| u[j]).fold(f64::INFINITY, f64::min);
            let hi = updates.iter().map(|(_, u)| u[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got[j] >= lo - 1e-12 && got[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn weighted_update_ignores_weight_scale(updates in weighted_updates(), c in 0.001..1000.0f64) {
        let scaled: Vec<_> = updates.iter().map(|(w, u)| (w * c, u.clone())).collect();
        let a = weighted_global_update(&updates).unwrap();
        let b = weighted_global_update(&scaled).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn client_weight_is_monotone(loss in 0.01..10.0f64, size in 1u64..10_000, bw in 0.1..1000.0f64, alpha in 0.01..2.0f64) {
        let p = WeightParams { alpha, ..Default::default() };
        let m = ClientMeta { client_id: "c".into(), loss, data_size: size, bandwidth: bw };
        let w = client_weight(&m, &p);
        let more_loss = ClientMeta { loss: loss * 1.5, ..m.clone() };
        let more_data = ClientMeta { data_size: size + 1, ..m.clone() };
        let more_bw = ClientMeta { bandwidth: bw * 1.5, ..m.clone() };
        prop_assert!(client_weight(&more_loss, &p) > w);
        prop_assert!(client_weight(&more_data, &p) < w);
        prop_assert!(client_weight(&more_bw, &p) < w);
    }

    #[test]
    fn total_delay_is_additive(a in platforms(), b in platforms()) {
        let joined: Vec<_> = a.iter().chain(&b).cloned().collect();
        let sum = total_delay(&a).unwrap() + total_delay(&b).unwrap();
        prop_assert!((total_delay(&joined).unwrap() - sum).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn total_delay_falls_with_bandwidth(ps in platforms(), i in any::<prop::sample::Index>(), f in 1.01..10.0f64) {
        let i = i.index(ps.len());
        prop_assume!(ps[i].payload_mb > 0.0);
        let mut faster = ps.clone();
        faster[i].bandwidth_mbps *= f;
        prop_assert!(total_delay(&faster).unwrap() < total_delay(&ps).unwrap());
    }

    #[test]
    fn weighted_delay_is_a_convex_combination(ps in platforms(), raw in prop::collection::vec(0.0..1.0f64, 8)) {
        let raw = &raw[..ps.len()];
        prop_assume!(raw.iter().sum::<f64>() > 1e-6);
        let ids = ps.iter().map(|p| p.platform_id.clone()).collect();
        let w = SyncWeights::normalized(ids, raw).unwrap();
        let d = weighted_sync_delay(&ps, &w).unwrap();
        let lo = ps.iter().map(|p| p.sync_latency_s).fold(f64::INFINITY, f64::min);
        let hi = ps.iter().map(|p| p.sync_latency_s).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
    }

    #[test]
    fn derived_weights_sum_to_one_and_follow_permutations(ps in platforms(), seed in any::<u64>()) {
        let policy = WeightPolicy::default();
        let w = derive_sync_weights(&ps, &samples_for(&ps), &policy).unwrap();
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        let mut order: Vec<usize> = (0..ps.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<_> = order.iter().map(|&i| ps[i].clone()).collect();
        let mut samples = samples_for(&ps);
        samples.reverse();
        let pw = derive_sync_weights(&permuted, &samples, &policy).unwrap();
        for (pos, &i) in order.iter().enumerate() {
            prop_assert!((pw.weights[pos] - w.weights[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn trace_order_is_a_stable_sort(rows in prop::collection::vec((0u8..5, 0u8..3), 1..30)) {
        let mut text = String::from("timestamp_s,platform_id,latency_ms,bandwidth_MBps,jitter_ms\n");
        for (i, (t, p)) in rows.iter().enumerate() {
            text.push_str(&format!("{t},p{p},{},10,0\n", i + 1));
        }
        let got = parse_trace(text.as_bytes(), Path::new("mem.csv")).unwrap();
        let mut expected: Vec<(u8, String, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, (t, p))| (*t, format!("p{p}"), i + 1))
            .collect();
        expected.sort_by_key(|e| e.0);
        let got: Vec<(u8, String, usize)> = got
            .iter()
            .map(|s| (s.timestamp_s as u8, s.platform_id.clone(), s.latency_ms as usize))
            .collect();
        prop_assert_eq!(got, expected);
    }
}
