//! Logistic-regression probe that predicts the domain of a representation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_LEARNING_RATE: f64 = 0.5;
pub const PROBE_L2: f64 = 1e-3;

/// Standardized-feature logistic regression fit by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LogisticProbe {
    /// Fit on rows `x` with binary targets `y`.
    pub fn fit(x: &[&[f64]], y: &[bool]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Usage("probe needs one target per non-empty row".into()));
        }
        let n = x.len() as f64;
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::shape("probe", &[x[0].len()], &[d]));
        }
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 };
        }
        let mut probe = LogisticProbe {
            mean,
            scale,
            weights: vec![0.0; d],
            bias: 0.0,
        };
        let z: Vec<Vec<f64>> = x.iter().map(|r| probe.standardize(r)).collect();
        for _ in 0..PROBE_ITERATIONS {
            let mut gw: Vec<f64> = probe.weights.iter().map(|w| PROBE_L2 * w).collect();
            let mut gb = 0.0;
            for (row, &t) in z.iter().zip(y) {
                let err = sigmoid(probe.logit(row)) - f64::from(u8::from(t));
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += err * v / n;
                }
                gb += err / n;
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= PROBE_LEARNING_RATE * g;
            }
            probe.bias -= PROBE_LEARNING_RATE * gb;
        }
        Ok(probe)
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn logit(&self, z: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        self.logit(&self.standardize(row)) > 0.0
    }
}

/// Held-out accuracy of a fresh probe separating source from target
/// representations. Both sets are subsampled to the same size, then split
/// in half per domain for training and testing.
pub fn domain_probe_accuracy(source: &[Vec<f64>], target: &[Vec<f64>], seed: u64) -> Result<f64> {
    let n = source.len().min(target.len());
    if n < 2 {
        return Err(Error::Usage("domain probe needs at least two documents per domain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |set: &[Vec<f64>]| {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx
    };
    let s_idx = pick(source);
    let t_idx = pick(target);
    let n_train = n / 2;
    let mut train_x: Vec<&[f64]> = Vec::new();
    let mut train_y = Vec::new();
    for (set, idx, label) in [(source, &s_idx, false), (target, &t_idx, true)] {
        for &i in &idx[..n_train] {
            train_x.push(&set[i]);
            train_y.push(label);
        }
    }
    let probe = LogisticProbe::fit(&train_x, &train_y)?;
    let mut correct = 0;
    let mut total = 0;
    for (set, idx, label) in [(source, &s_idx, false), (target, &t_idx, true)] {
        for &i in &idx[n_train..] {
            correct += usize::from(probe.predict(&set[i]) == label);
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
