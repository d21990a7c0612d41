//! Emulator network `φ(s, a) → Δf̂_{t+1}` and the zeroth-order action gradient
//! that stands in for a critic.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LfcError, Result};
use crate::fit::{self, FitSettings, OutputMap};
use crate::neural::{load_checkpoint_with_metadata, save_checkpoint_with_metadata, Mlp};
use crate::pid::DbRecord;
use crate::plant::Observation;

pub use crate::fit::EpochLoss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplier on the learning rate.
    pub lr_decay: f64,
    /// Divisors for (f_dev, f_int, f_der, action).
    pub scales: [f64; 4],
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            scales: [0.05, 0.05, 0.5, 0.03],
            validation_fraction: 0.2,
            patience: 20,
            seed: 3,
        }
    }
}

impl EmulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(LfcError::InvalidParameter {
                name: "validation_fraction",
                reason: format!("must lie in (0, 1), got {}", self.validation_fraction),
            });
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LfcError::InvalidParameter {
                name: "scales",
                reason: format!("must be positive, got {:?}", self.scales),
            });
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(LfcError::InvalidParameter {
                name: "lr_decay",
                reason: format!("must lie in (0, 1], got {}", self.lr_decay),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LfcError::InvalidParameter {
                name: "epochs",
                reason: "epochs and batch_size must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// How the perturbation directions `u_k` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent standard normal draws.
    Gaussian,
    /// One standard normal draw per equal-probability stratum.
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    /// Perturbation magnitude, p.u.
    pub epsilon: f64,
    /// K.
    pub n_samples: usize,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            n_samples: 32,
            seed: 5,
            sampling: Sampling::Stratified,
        }
    }
}

impl ZooConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "epsilon",
                reason: format!("must be positive, got {}", self.epsilon),
            });
        }
        if self.n_samples == 0 {
            return Err(LfcError::InvalidParameter {
                name: "n_samples",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// `K` standard normal directions.
pub fn draw_directions<R: Rng + ?Sized>(k: usize, sampling: Sampling, rng: &mut R) -> Vec<f64> {
    match sampling {
        Sampling::Gaussian => (0..k).map(|_| rng.sample(StandardNormal)).collect(),
        Sampling::Stratified => {
            let normal = Normal::standard();
            (0..k)
                .map(|i| {
                    // open interval keeps the quantile finite
                    let v: f64 = rng.random_range(f64::EPSILON..1.0 - f64::EPSILON);
                    normal.inverse_cdf((i as f64 + v) / k as f64)
                })
                .collect()
        }
    }
}

/// `(1/K) Σ_k [f(a + εu_k) − f(a − εu_k)] / (2ε) · u_k`.
pub fn zoo_estimate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    epsilon: f64,
    directions: &[f64],
) -> f64 {
    if directions.is_empty() {
        return 0.0;
    }
    let sum: f64 = directions
        .iter()
        .map(|&u| (f(a + epsilon * u) - f(a - epsilon * u)) / (2.0 * epsilon) * u)
        .sum();
    sum / directions.len() as f64
}

/// Action value `Q = −Δf_{t+1}²`.
pub fn q_value(delta_f_next: f64) -> f64 {
    -(delta_f_next * delta_f_next)
}

/// `∂Q/∂a = −2·Δf̂_{t+1}·∂Δf̂_{t+1}/∂a`.
pub fn dq_da_from(prediction: f64, action_grad: f64) -> f64 {
    -2.0 * prediction * action_grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emulator {
    net: Mlp,
    scales: [f64; 4],
}

const SCALE_KEYS: [&str; 4] = ["scale.f_dev", "scale.f_int", "scale.f_der", "scale.action"];

impl Emulator {
    pub fn new(net: Mlp, scales: [f64; 4]) -> Result<Self> {
        if net.input_dim() != 4 || net.output_dim() != 1 {
            return Err(LfcError::DimensionMismatch {
                expected: 4,
                got: net.input_dim(),
            });
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LfcError::InvalidParameter {
                name: "scales",
                reason: format!("must be positive, got {scales:?}"),
            });
        }
        Ok(Self { net, scales })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn scales(&self) -> [f64; 4] {
        self.scales
    }

    pub fn normalize(&self, obs: &Observation, action: f64) -> [f64; 4] {
        let s = self.scales;
        [
            obs.f_dev / s[0],
            obs.f_int / s[1],
            obs.f_der / s[2],
            action / s[3],
        ]
    }

    /// Δf̂_{t+1}, Hz.
    pub fn predict(&self, obs: &Observation, action: f64) -> Result<f64> {
        Ok(self.net.forward(&self.normalize(obs, action))?[0])
    }

    pub fn predict_batch(&self, pairs: &[(Observation, f64)]) -> Result<Vec<f64>> {
        let xs: Vec<f64> = pairs
            .iter()
            .flat_map(|(o, a)| self.normalize(o, *a))
            .collect();
        self.net.forward_batch(&xs, pairs.len())
    }

    /// Exact `∂Δf̂/∂a` by backpropagation.
    pub fn action_gradient(&self, obs: &Observation, action: f64) -> Result<f64> {
        let (_, input_grad) = self.net.backward(&self.normalize(obs, action), &[1.0])?;
        Ok(input_grad[3] / self.scales[3])
    }

    /// Zeroth-order `∂Δf̂/∂a` with directions from `rng`.
    pub fn zoo_grad_with<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        action: f64,
        epsilon: f64,
        k: usize,
        sampling: Sampling,
        rng: &mut R,
    ) -> Result<f64> {
        let u = draw_directions(k, sampling, rng);
        let pairs: Vec<(Observation, f64)> = u
            .iter()
            .flat_map(|&u| [(*obs, action + epsilon * u), (*obs, action - epsilon * u)])
            .collect();
        let out = self.predict_batch(&pairs)?;
        let mut it = out.iter();
        Ok(zoo_estimate(
            |_| *it.next().expect("two outputs per draw"),
            action,
            epsilon,
            &u,
        ))
    }

    /// Zeroth-order `∂Δf̂/∂a` seeded from `zoo.seed`.
    pub fn zoo_grad(&self, obs: &Observation, action: f64, zoo: &ZooConfig) -> Result<f64> {
        zoo.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(zoo.seed);
        self.zoo_grad_with(
            obs,
            action,
            zoo.epsilon,
            zoo.n_samples,
            zoo.sampling,
            &mut rng,
        )
    }

    pub fn dq_da(&self, obs: &Observation, action: f64, zoo: &ZooConfig) -> Result<f64> {
        let p = self.predict(obs, action)?;
        Ok(dq_da_from(p, self.zoo_grad(obs, action, zoo)?))
    }

    /// Predictions and zeroth-order action gradients for a batch, evaluated in
    /// one forward pass. Returns `(Δf̂, ∂Δf̂/∂a)` per pair.
    pub fn predict_and_zoo_batch<R: Rng + ?Sized>(
        &self,
        pairs: &[(Observation, f64)],
        zoo: &ZooConfig,
        rng: &mut R,
    ) -> Result<Vec<(f64, f64)>> {
        zoo.validate()?;
        let k = zoo.n_samples;
        let eps = zoo.epsilon;
        let dirs: Vec<Vec<f64>> = pairs
            .iter()
            .map(|_| draw_directions(k, zoo.sampling, rng))
            .collect();
        let stride = 1 + 2 * k;
        let mut xs = Vec::with_capacity(pairs.len() * stride * 4);
        for ((obs, a), u) in pairs.iter().zip(&dirs) {
            xs.extend(self.normalize(obs, *a));
            for &u in u {
                xs.extend(self.normalize(obs, a + eps * u));
                xs.extend(self.normalize(obs, a - eps * u));
            }
        }
        let out = self.net.forward_batch(&xs, pairs.len() * stride)?;
        Ok(out
            .chunks_exact(stride)
            .zip(&dirs)
            .zip(pairs)
            .map(|((row, u), (_, a))| {
                let mut it = row[1..].iter();
                let g = zoo_estimate(|_| *it.next().expect("two outputs per draw"), *a, eps, u);
                (row[0], g)
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), "emulator".to_string());
        for (k, s) in SCALE_KEYS.iter().zip(self.scales) {
            meta.insert(k.to_string(), format!("{s:?}"));
        }
        save_checkpoint_with_metadata(&self.net, &meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (net, meta) = load_checkpoint_with_metadata(path)?;
        let origin = path.display().to_string();
        let mut scales = [0.0; 4];
        for (s, key) in scales.iter_mut().zip(SCALE_KEYS) {
            let raw = meta
                .get(key)
                .ok_or_else(|| LfcError::parse(&origin, key, "missing metadata line"))?;
            *s = raw
                .parse()
                .map_err(|e| LfcError::parse(&origin, key, format!("`{raw}`: {e}")))?;
        }
        Self::new(net, scales)
    }
}

#[derive(Debug, Clone)]
pub struct EmulatorTraining {
    pub emulator: Emulator,
    pub log: Vec<EpochLoss>,
    pub best_epoch: usize,
    /// Indices into the database rows held out for validation.
    pub validation: Vec<usize>,
    pub validation_rmse: f64,
    /// RMS of the true next Δf over the validation rows.
    pub validation_target_rms: f64,
}

/// Fits the emulator to `(obs, action) → next Δf` with Adam and early stopping.
pub fn train_emulator(records: &[DbRecord], cfg: &EmulatorConfig) -> Result<EmulatorTraining> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(LfcError::InsufficientData(
            "emulator database is empty".into(),
        ));
    }
    let mut sizes = vec![4];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::init(&sizes, cfg.seed)?;
    // start from a constant map so no spurious input dependence has to be unlearned
    let last = net.num_layers() - 1;
    net.weights_mut(last).fill(0.0);
    let template = Emulator::new(net, cfg.scales)?;
    let (train_idx, val_idx) = fit::split_indices(records.len(), cfg.validation_fraction, cfg.seed);
    let gather = |idx: &[usize]| {
        let x: Vec<f64> = idx
            .iter()
            .flat_map(|&i| template.normalize(&records[i].obs, records[i].action))
            .collect();
        let y: Vec<f64> = idx.iter().map(|&i| records[i].next_delta_f).collect();
        (x, y)
    };
    let (x, y) = gather(&train_idx);
    let (xv, yv) = gather(&val_idx);
    let settings = FitSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        lr_decay: cfg.lr_decay,
        patience: cfg.patience,
        seed: cfg.seed.wrapping_add(1),
    };
    let out = fit::fit(template.net, OutputMap::Linear, &x, &y, &xv, &yv, settings)?;
    let (eval_x, eval_y) = if yv.is_empty() { (&x, &y) } else { (&xv, &yv) };
    let mse = fit::mean_squared_error(&out.net, OutputMap::Linear, eval_x, eval_y)?;
    let rms = (eval_y.iter().map(|v| v * v).sum::<f64>() / eval_y.len() as f64).sqrt();
    Ok(EmulatorTraining {
        emulator: Emulator::new(out.net, cfg.scales)?,
        log: out.log,
        best_epoch: out.best_epoch,
        validation: val_idx,
        validation_rmse: mse.sqrt(),
        validation_target_rms: rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_value_examples() {
        assert_eq!(q_value(0.0), 0.0);
        assert!((q_value(0.1) + 0.01).abs() < 1e-15);
        assert_eq!(q_value(-0.1), q_value(0.1));
    }

    #[test]
    fn dq_da_examples() {
        assert_eq!(dq_da_from(0.0, 123.0), 0.0);
        assert!((dq_da_from(0.01, -0.5) - 0.01).abs() < 1e-15);
        assert!(dq_da_from(0.2, -0.1) > 0.0);
    }

    #[test]
    fn quadratic_is_exact_per_sample() {
        // f(a) = 3a² − 2a + 1 → f'(a) = 6a − 2; each sample gives f'(a)·u².
        let f = |a: f64| 3.0 * a * a - 2.0 * a + 1.0;
        for u in [-1.7, 0.3, 2.2] {
            let g = zoo_estimate(f, 0.4, 1e-3, &[u]);
            assert!((g - 0.4 * u * u).abs() < 1e-9, "{g}");
        }
    }

    #[test]
    fn action_independent_map_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = draw_directions(50, Sampling::Gaussian, &mut rng);
        assert_eq!(zoo_estimate(|_| 4.2, 0.1, 1e-4, &u), 0.0);
    }

    #[test]
    fn stratified_directions_have_unit_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = draw_directions(100, Sampling::Stratified, &mut rng);
        let m2 = u.iter().map(|v| v * v).sum::<f64>() / 100.0;
        assert!((m2 - 1.0).abs() < 0.05, "{m2}");
    }

    #[test]
    fn rejects_bad_zoo_config() {
        let bad = ZooConfig {
            epsilon: 0.0,
            ..ZooConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ZooConfig {
            n_samples: 0,
            ..ZooConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_database_is_rejected() {
        assert!(matches!(
            train_emulator(&[], &EmulatorConfig::default()),
            Err(LfcError::InsufficientData(_))
        ));
    }

    #[test]
    fn checkpoint_keeps_scales() {
        let em = Emulator::new(Mlp::init(&[4, 3, 1], 1).unwrap(), [0.1, 0.2, 0.3, 0.04]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("em.txt");
        em.save(&p).unwrap();
        assert_eq!(Emulator::load(&p).unwrap(), em);
    }
}
