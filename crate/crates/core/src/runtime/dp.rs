use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::DpSpec;
use crate::vector::GradientVector;

/// Scale `v` down to L2 norm `clip` if it is longer; untouched otherwise.
pub fn clip_to_norm(v: &GradientVector, clip: f64) -> GradientVector {
    let norm = v.norm();
    if norm > clip {
        v.scaled(clip / norm)
    } else {
        v.clone()
    }
}

/// `dim` i.i.d. draws from `N(0, std^2)`.
pub fn gaussian_noise<R: Rng + ?Sized>(dim: usize, std: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

/// Clip then add spherical noise of scale `noise_multiplier * clip`.
pub fn privatize<R: Rng + ?Sized>(v: &GradientVector, dp: &DpSpec, rng: &mut R) -> GradientVector {
    let mut out = clip_to_norm(v, dp.clip);
    if dp.noise_multiplier == 0.0 {
        // adding +0.0 would turn -0.0 coordinates into +0.0
        return out;
    }
    let noise = gaussian_noise(out.dim(), dp.noise_multiplier * dp.clip, rng);
    for (x, n) in out.iter_mut().zip(noise) {
        *x += n;
    }
    out
}
