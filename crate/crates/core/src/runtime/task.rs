//! Seeded synthetic training tasks and the local optimizer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::vector::{check_dim, GradientVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LogisticRegression,
    LinearRegression,
}

/// How a synthetic task is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of features; models carry one extra bias coordinate.
    pub dim: usize,
    pub samples_per_client: usize,
    /// 0 gives iid clients; towards 1 each client's labels skew further.
    #[serde(default)]
    pub heterogeneity_skew: f64,
    /// Label flip probability (logistic) or noise std (linear).
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_epochs() -> usize {
    1
}

fn default_lr() -> f64 {
    0.1
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("task.dim", "must be positive"));
        }
        if self.samples_per_client == 0 {
            return Err(Error::config("task.samples_per_client", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.heterogeneity_skew) {
            return Err(Error::config("task.heterogeneity_skew", "must be in [0, 1)"));
        }
        let noise_ok = match self.kind {
            TaskKind::LogisticRegression => (0.0..=0.5).contains(&self.label_noise),
            TaskKind::LinearRegression => self.label_noise.is_finite() && self.label_noise >= 0.0,
        };
        if !noise_ok {
            return Err(Error::config("task.label_noise", "out of range"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("task.learning_rate", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn model_dim(&self) -> usize {
        self.dim + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Dataset {
        let mut out = Dataset {
            features: Vec::new(),
            labels: Vec::new(),
        };
        for d in parts {
            out.features.extend(d.features.iter().cloned());
            out.labels.extend(d.labels.iter().cloned());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub dim: usize,
    pub clients: Vec<Dataset>,
    /// Features then bias.
    pub ground_truth: GradientVector,
}

impl SyntheticTask {
    /// Generate `n_clients` shards from `seed`.
    pub fn generate(spec: &TaskSpec, n_clients: usize, seed: u64) -> Result<SyntheticTask> {
        spec.validate()?;
        let mut rng = rng::stream(seed, Purpose::TaskData, u64::MAX);
        let normal = |rng: &mut rand_chacha::ChaCha20Rng| -> f64 { StandardNormal.sample(rng) };
        let scale = 1.0 / (spec.dim as f64).sqrt();
        let mut truth: Vec<f64> = (0..spec.dim).map(|_| 2.0 * scale * normal(&mut rng)).collect();
        truth.push(0.5 * normal(&mut rng));
        let truth = GradientVector(truth);
        let w_norm = truth[..spec.dim].iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);

        let clients = (0..n_clients)
            .map(|k| {
                let mut rng = rng::stream(seed, Purpose::TaskData, k as u64);
                let side = if k % 2 == 0 { 1.0 } else { -1.0 };
                let mut features = Vec::with_capacity(spec.samples_per_client);
                let mut labels = Vec::with_capacity(spec.samples_per_client);
                while labels.len() < spec.samples_per_client {
                    let mut x: Vec<f64> = (0..spec.dim).map(|_| normal(&mut rng)).collect();
                    let y = match spec.kind {
                        TaskKind::LinearRegression => {
                            // covariate shift along the true direction
                            for (xi, wi) in x.iter_mut().zip(truth.iter()) {
                                *xi += 2.0 * spec.heterogeneity_skew * side * wi / w_norm;
                            }
                            let noise = spec.label_noise * normal(&mut rng);
                            truth.dot(&x) + truth[spec.dim] + noise
                        }
                        TaskKind::LogisticRegression => {
                            let positive = truth.dot(&x) + truth[spec.dim] > 0.0;
                            // reject towards this client's preferred class
                            let keep = if positive {
                                0.5 + 0.5 * spec.heterogeneity_skew * side
                            } else {
                                0.5 - 0.5 * spec.heterogeneity_skew * side
                            };
                            if rng.random::<f64>() >= keep * 2.0 / (1.0 + spec.heterogeneity_skew) {
                                continue;
                            }
                            let flip = rng.random::<f64>() < spec.label_noise;
                            if positive != flip {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    features.push(x);
                    labels.push(y);
                }
                Dataset { features, labels }
            })
            .collect();

        Ok(SyntheticTask {
            kind: spec.kind,
            dim: spec.dim,
            clients,
            ground_truth: truth,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.dim + 1
    }

    pub fn pooled(&self) -> Dataset {
        Dataset::pooled(&self.clients)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn predict_raw(model: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    model[..d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + model[d]
}

/// Mean loss: squared error for linear, cross-entropy for logistic.
pub fn loss(kind: TaskKind, data: &Dataset, model: &[f64]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let total: f64 = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| {
            let z = predict_raw(model, x);
            match kind {
                TaskKind::LinearRegression => (z - y).powi(2),
                // log(1 + e^z) - y z, written stably
                TaskKind::LogisticRegression => z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z,
            }
        })
        .sum();
    total / data.len() as f64
}

/// Full-batch gradient of [`loss`]: `(2/n) sum (z - y) x~` for squared
/// error, `(1/n) sum (sigmoid(z) - y) x~` for cross-entropy, where `x~` is
/// `x` with a trailing 1.
pub fn gradient(kind: TaskKind, data: &Dataset, model: &[f64]) -> Vec<f64> {
    let d = model.len() - 1;
    let mut g = vec![0.0; d + 1];
    if data.is_empty() {
        return g;
    }
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let z = predict_raw(model, x);
        let r = match kind {
            TaskKind::LinearRegression => 2.0 * (z - y),
            TaskKind::LogisticRegression => sigmoid(z) - y,
        };
        for (gi, xi) in g[..d].iter_mut().zip(x) {
            *gi += r * xi;
        }
        g[d] += r;
    }
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Run `epochs` full-batch gradient steps from `model`. Returns the model
/// delta and the loss after training.
pub fn local_train(
    kind: TaskKind,
    data: &Dataset,
    model: &GradientVector,
    epochs: usize,
    lr: f64,
) -> Result<(GradientVector, f64)> {
    if let Some(x) = data.features.first() {
        check_dim(model.dim(), x.len() + 1)?;
    }
    if data.features.iter().any(|x| x.len() + 1 != model.dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: 0,
        });
    }
    let mut w = model.0.clone();
    for _ in 0..epochs {
        let g = gradient(kind, data, &w);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= lr * gi;
        }
    }
    let l = loss(kind, data, &w);
    let update = w.iter().zip(model.iter()).map(|(a, b)| a - b).collect();
    Ok((GradientVector(update), l))
}

/// Fraction of correctly classified samples (logistic tasks only).
pub fn accuracy(kind: TaskKind, data: &Dataset, model: &[f64]) -> Option<f64> {
    if kind != TaskKind::LogisticRegression || data.is_empty() {
        return None;
    }
    let correct = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| (predict_raw(model, x) > 0.0) == (y > 0.5))
        .count();
    Some(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sample(x: f64, y: f64) -> Dataset {
        Dataset {
            features: vec![vec![x]],
            labels: vec![y],
        }
    }

    #[test]
    fn single_step_closed_form() {
        // L = (w x + b - y)^2, dL/dw = 2 (w x + b - y) x; from 0 with x=1, y=2:
        // update = lr * 2 * (2 - 0) * 1 = 0.4 for both weight and bias.
        let (u, l) = local_train(
            TaskKind::LinearRegression,
            &one_sample(1.0, 2.0),
            &GradientVector::zeros(2),
            1,
            0.1,
        )
        .unwrap();
        assert!((u[0] - 0.4).abs() < 1e-15);
        assert!((u[1] - 0.4).abs() < 1e-15);
        // new prediction 0.8, residual 1.2
        assert!((l - 1.44).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = one_sample(0.7, -1.0);
        let model = GradientVector(vec![0.3, 0.1]);
        let (u, l) = local_train(TaskKind::LinearRegression, &data, &model, 5, 0.0).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        assert_eq!(l, loss(TaskKind::LinearRegression, &data, &model));
    }

    #[test]
    fn optimum_is_stationary() {
        let spec = TaskSpec {
            kind: TaskKind::LinearRegression,
            dim: 3,
            samples_per_client: 5,
            heterogeneity_skew: 0.0,
            label_noise: 0.0,
            local_epochs: 1,
            learning_rate: 0.1,
        };
        let task = SyntheticTask::generate(&spec, 2, 4).unwrap();
        let (u, l) = local_train(
            task.kind,
            &task.clients[0],
            &task.ground_truth,
            3,
            0.1,
        )
        .unwrap();
        assert!(u.norm() <= 1e-9);
        assert!(l <= 1e-18);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = TaskSpec {
            kind: TaskKind::LogisticRegression,
            dim: 4,
            samples_per_client: 12,
            heterogeneity_skew: 0.3,
            label_noise: 0.1,
            local_epochs: 1,
            learning_rate: 0.1,
        };
        for kind in [TaskKind::LogisticRegression, TaskKind::LinearRegression] {
            let task = SyntheticTask::generate(&TaskSpec { kind, ..spec.clone() }, 1, 9).unwrap();
            let w = vec![0.2, -0.4, 0.1, 0.3, -0.05];
            let g = gradient(kind, &task.clients[0], &w);
            let h = 1e-6;
            for i in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (loss(kind, &task.clients[0], &wp) - loss(kind, &task.clients[0], &wm)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "{kind:?} coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = TaskSpec {
            kind: TaskKind::LogisticRegression,
            dim: 5,
            samples_per_client: 20,
            heterogeneity_skew: 0.5,
            label_noise: 0.0,
            local_epochs: 1,
            learning_rate: 0.5,
        };
        let a = SyntheticTask::generate(&spec, 3, 1).unwrap();
        assert_eq!(a, SyntheticTask::generate(&spec, 3, 1).unwrap());
        assert_ne!(a, SyntheticTask::generate(&spec, 3, 2).unwrap());
        assert!(a.clients.iter().all(|c| c.len() == 20));
        // noiseless labels are separable by the ground truth
        assert_eq!(accuracy(a.kind, &a.pooled(), &a.ground_truth), Some(1.0));
    }

    #[test]
    fn skew_moves_label_balance() {
        let spec = TaskSpec {
            kind: TaskKind::LogisticRegression,
            dim: 4,
            samples_per_client: 400,
            heterogeneity_skew: 0.8,
            label_noise: 0.0,
            local_epochs: 1,
            learning_rate: 0.5,
        };
        let t = SyntheticTask::generate(&spec, 2, 3).unwrap();
        let pos = |d: &Dataset| d.labels.iter().sum::<f64>() / d.len() as f64;
        assert!(pos(&t.clients[0]) > pos(&t.clients[1]) + 0.3);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(local_train(
            TaskKind::LinearRegression,
            &one_sample(1.0, 1.0),
            &GradientVector::zeros(3),
            1,
            0.1
        )
        .is_err());
    }
}
