//! Minibatch supervised regression shared by the emulator and the actor clone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LfcError, Result};
use crate::neural::Direction;
use crate::neural::{Mlp, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FitSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplier on the learning rate.
    pub lr_decay: f64,
    pub patience: usize,
    pub seed: u64,
}

/// Map from the network's raw output to the prediction.
#[derive(Debug, Clone, Copy)]
pub(crate) enum OutputMap {
    Linear,
    ScaledTanh(f64),
}

impl OutputMap {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputMap::Linear => z,
            OutputMap::ScaledTanh(a) => a * z.tanh(),
        }
    }

    /// Derivative of the mapped output with respect to `z`, given the mapped value.
    fn slope(self, mapped: f64) -> f64 {
        match self {
            OutputMap::Linear => 1.0,
            OutputMap::ScaledTanh(a) => {
                let t = mapped / a;
                a * (1.0 - t * t)
            }
        }
    }
}

pub(crate) struct FitOutcome {
    pub net: Mlp,
    pub log: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Deterministic shuffle split; returns `(train, validation)` index lists.
pub(crate) fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = if n < 2 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    };
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

pub(crate) fn mean_squared_error(net: &Mlp, map: OutputMap, x: &[f64], y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Ok(f64::NAN);
    }
    let d = net.input_dim();
    let mut total = 0.0;
    for (xs, ys) in x.chunks(1024 * d).zip(y.chunks(1024)) {
        let out = net.forward_batch(xs, ys.len())?;
        total += out
            .iter()
            .zip(ys)
            .map(|(z, t)| {
                let e = map.apply(*z) - t;
                e * e
            })
            .sum::<f64>();
    }
    Ok(total / y.len() as f64)
}

/// Adam on the mean squared error, keeping the parameters with the lowest
/// validation loss and stopping after `patience` epochs without improvement.
pub(crate) fn fit(
    mut net: Mlp,
    map: OutputMap,
    x: &[f64],
    y: &[f64],
    x_val: &[f64],
    y_val: &[f64],
    s: FitSettings,
) -> Result<FitOutcome> {
    let d = net.input_dim();
    let n = y.len();
    if n == 0 {
        return Err(LfcError::InsufficientData("no training rows".into()));
    }
    if x.len() != n * d || x_val.len() != y_val.len() * d {
        return Err(LfcError::DimensionMismatch {
            expected: n * d,
            got: x.len(),
        });
    }
    let batch = s.batch_size.max(1).min(n);
    let mut opt = OptimizerState::adam(s.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(s.epochs);
    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut xb = Vec::with_capacity(batch * d);
    let mut yb = Vec::with_capacity(batch);
    for epoch in 1..=s.epochs {
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&x[i * d..(i + 1) * d]);
                yb.push(y[i]);
            }
            let cache = net.forward_cached(&xb, chunk.len())?;
            let m = chunk.len() as f64;
            let mut loss = 0.0;
            let upstream: Vec<f64> = cache
                .output()
                .iter()
                .zip(&yb)
                .map(|(z, t)| {
                    let p = map.apply(*z);
                    let e = p - t;
                    loss += e * e;
                    2.0 * e / m * map.slope(p)
                })
                .collect();
            if !loss.is_finite() {
                return Err(LfcError::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b}"
                )));
            }
            train_sum += loss;
            let (grads, _) = net.backward_cached(&cache, &upstream)?;
            opt.apply_update(&mut net, &grads, Direction::Descent)?;
        }
        opt.learning_rate *= s.lr_decay;
        let train = train_sum / n as f64;
        let validation = if y_val.is_empty() {
            mean_squared_error(&net, map, x, y)?
        } else {
            mean_squared_error(&net, map, x_val, y_val)?
        };
        if !validation.is_finite() {
            return Err(LfcError::NonFinite(format!(
                "validation loss at epoch {epoch}"
            )));
        }
        log.push(EpochLoss {
            epoch,
            train,
            validation,
        });
        if validation < best.0 {
            best = (validation, net.clone(), epoch);
        } else if epoch - best.2 >= s.patience {
            break;
        }
    }
    Ok(FitOutcome {
        net: best.1,
        log,
        best_epoch: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_complete() {
        let (t, v) = split_indices(100, 0.2, 3);
        assert_eq!(v.len(), 20);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.2, 3), (t, v));
        assert!(split_indices(1, 0.2, 0).1.is_empty());
    }

    #[test]
    fn fits_a_line() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 100.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 0.1).collect();
        let net = Mlp::init(&[1, 8, 1], 1).unwrap();
        let s = FitSettings {
            epochs: 400,
            batch_size: 32,
            learning_rate: 1e-2,
            lr_decay: 1.0,
            patience: 400,
            seed: 2,
        };
        let out = fit(net, OutputMap::Linear, &x, &y, &[], &[], s).unwrap();
        assert!(out.log.last().unwrap().validation < 1e-5);
    }
}
