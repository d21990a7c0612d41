//! Actor network, PID cloning, exploration noise, replay memory, and the
//! critic-free DDPG loop driven by zeroth-order action gradients.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::emulator::{dq_da_from, q_value, Emulator, EpochLoss, ZooConfig};
use crate::env::{Controller, Environment, Timing};
use crate::error::{LfcError, Result};
use crate::fit::{self, FitSettings, OutputMap};
use crate::neural::{
    load_checkpoint_with_metadata, save_checkpoint_with_metadata, Direction, Gradients, Mlp,
    OptimizerState,
};
use crate::pid::{mix_seed, DbRecord};
use crate::plant::{Observation, Plant, PlantState};
use crate::scenario::{randomized_training_schedule, Disturbance, WindModel};

/// Policy `a_max · tanh(net(obs / scales))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    net: Mlp,
    a_max: f64,
    obs_scales: [f64; 3],
}

pub const DEFAULT_OBS_SCALES: [f64; 3] = [0.05, 0.05, 0.5];

const OBS_SCALE_KEYS: [&str; 3] = ["scale.f_dev", "scale.f_int", "scale.f_der"];

impl Actor {
    pub fn new(net: Mlp, a_max: f64, obs_scales: [f64; 3]) -> Result<Self> {
        if net.input_dim() != 3 || net.output_dim() != 1 {
            return Err(LfcError::DimensionMismatch {
                expected: 3,
                got: net.input_dim(),
            });
        }
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "a_max",
                reason: format!("must be positive, got {a_max}"),
            });
        }
        if obs_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LfcError::InvalidParameter {
                name: "obs_scales",
                reason: format!("must be positive, got {obs_scales:?}"),
            });
        }
        Ok(Self {
            net,
            a_max,
            obs_scales,
        })
    }

    pub fn init(hidden: &[usize], a_max: f64, obs_scales: [f64; 3], seed: u64) -> Result<Self> {
        let mut sizes = vec![3];
        sizes.extend(hidden);
        sizes.push(1);
        Self::new(Mlp::init(&sizes, seed)?, a_max, obs_scales)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn obs_scales(&self) -> [f64; 3] {
        self.obs_scales
    }

    pub fn normalize(&self, obs: &Observation) -> [f64; 3] {
        let s = self.obs_scales;
        [obs.f_dev / s[0], obs.f_int / s[1], obs.f_der / s[2]]
    }

    /// Deterministic policy output μ(s).
    pub fn policy(&self, obs: &Observation) -> f64 {
        let z = self
            .net
            .forward(&self.normalize(obs))
            .expect("actor input dimension checked at construction")[0];
        self.a_max * z.tanh()
    }

    /// `μ(s) + noise`, clipped to `[−a_max, a_max]`.
    pub fn act(&self, obs: &Observation, noise: f64) -> f64 {
        (self.policy(obs) + noise).clamp(-self.a_max, self.a_max)
    }

    pub fn apply_update(
        &mut self,
        opt: &mut OptimizerState,
        grads: &Gradients,
        dir: Direction,
    ) -> Result<()> {
        opt.apply_update(&mut self.net, grads, dir)
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "actor".into());
        meta.insert("a_max".into(), format!("{:?}", self.a_max));
        for (k, s) in OBS_SCALE_KEYS.iter().zip(self.obs_scales) {
            meta.insert(k.to_string(), format!("{s:?}"));
        }
        save_checkpoint_with_metadata(&self.net, &meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (net, meta) = load_checkpoint_with_metadata(path)?;
        let origin = path.display().to_string();
        let get = |key: &str| -> Result<f64> {
            let raw = meta
                .get(key)
                .ok_or_else(|| LfcError::parse(&origin, key, "missing metadata line"))?;
            raw.parse()
                .map_err(|e| LfcError::parse(&origin, key, format!("`{raw}`: {e}")))
        };
        let a_max = get("a_max")?;
        let mut scales = [0.0; 3];
        for (s, key) in scales.iter_mut().zip(OBS_SCALE_KEYS) {
            *s = get(key)?;
        }
        Self::new(net, a_max, scales)
    }
}

impl Controller for Actor {
    fn act(&mut self, obs: &Observation) -> f64 {
        Actor::act(self, obs, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplier on the learning rate.
    pub lr_decay: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub a_max: f64,
    pub obs_scales: [f64; 3],
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            validation_fraction: 0.2,
            patience: 30,
            a_max: 0.1,
            obs_scales: DEFAULT_OBS_SCALES,
            seed: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub actor: Actor,
    pub log: Vec<EpochLoss>,
    pub best_epoch: usize,
    /// Database rows held out from fitting.
    pub validation: Vec<usize>,
    pub validation_mse: f64,
}

/// Behaviour cloning of the logged actions, MSE after the `a_max·tanh` output.
pub fn pretrain_actor(records: &[DbRecord], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if records.is_empty() {
        return Err(LfcError::InsufficientData(
            "pretraining database is empty".into(),
        ));
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(LfcError::InvalidParameter {
            name: "validation_fraction",
            reason: format!("must lie in (0, 1), got {}", cfg.validation_fraction),
        });
    }
    if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(LfcError::InvalidParameter {
            name: "lr_decay",
            reason: format!("must lie in (0, 1], got {}", cfg.lr_decay),
        });
    }
    let template = Actor::init(&cfg.hidden, cfg.a_max, cfg.obs_scales, cfg.seed)?;
    let (train_idx, val_idx) = fit::split_indices(records.len(), cfg.validation_fraction, cfg.seed);
    let gather = |idx: &[usize]| {
        let x: Vec<f64> = idx
            .iter()
            .flat_map(|&i| template.normalize(&records[i].obs))
            .collect();
        let y: Vec<f64> = idx.iter().map(|&i| records[i].action).collect();
        (x, y)
    };
    let (x, y) = gather(&train_idx);
    let (xv, yv) = gather(&val_idx);
    let map = OutputMap::ScaledTanh(cfg.a_max);
    let settings = FitSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        lr_decay: cfg.lr_decay,
        patience: cfg.patience,
        seed: cfg.seed.wrapping_add(1),
    };
    let out = fit::fit(template.net.clone(), map, &x, &y, &xv, &yv, settings)?;
    let validation_mse = fit::mean_squared_error(&out.net, map, &xv, &yv)?;
    Ok(PretrainOutcome {
        actor: Actor::new(out.net, cfg.a_max, cfg.obs_scales)?,
        log: out.log,
        best_epoch: out.best_epoch,
        validation: val_idx,
        validation_mse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuConfig {
    /// Mean-reversion rate, 1/s.
    pub theta: f64,
    /// Noise scale, p.u.
    pub sigma: f64,
    /// Multiplier applied to `sigma` after every episode.
    pub decay: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.02,
            decay: 0.97,
        }
    }
}

/// Ornstein–Uhlenbeck exploration noise around zero.
#[derive(Debug, Clone)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub decay: f64,
    x: f64,
    rng: ChaCha8Rng,
}

impl OuNoise {
    pub fn new(cfg: OuConfig, seed: u64) -> Result<Self> {
        if !(cfg.decay > 0.0 && cfg.decay <= 1.0) {
            return Err(LfcError::InvalidParameter {
                name: "decay",
                reason: format!("must lie in (0, 1], got {}", cfg.decay),
            });
        }
        if !(cfg.theta >= 0.0 && cfg.sigma >= 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "sigma",
                reason: "theta and sigma must be non-negative".into(),
            });
        }
        Ok(Self {
            theta: cfg.theta,
            sigma: cfg.sigma,
            decay: cfg.decay,
            x: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn value(&self) -> f64 {
        self.x
    }

    pub fn set_value(&mut self, x: f64) {
        self.x = x;
    }

    /// `x ← x − θ·x·dt + σ·√dt·z`.
    pub fn step(&mut self, dt: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.x += -self.theta * self.x * dt + self.sigma * dt.sqrt() * z;
        self.x
    }

    /// Zeroes the state and decays `sigma`.
    pub fn end_episode(&mut self) {
        self.x = 0.0;
        self.sigma *= self.decay;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: f64,
    pub next_obs: Observation,
    pub reward: f64,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.obs.is_finite()
            && self.next_obs.is_finite()
            && self.action.is_finite()
            && self.reward.is_finite()
    }
}

/// Database records as transitions with `r = −Δf_{t+1}²`.
pub fn transitions_from_records(records: &[DbRecord], control_period: f64) -> Vec<Transition> {
    records
        .iter()
        .map(|r| Transition {
            obs: r.obs,
            action: r.action,
            next_obs: r.next_obs(control_period),
            reward: q_value(r.next_delta_f),
        })
        .collect()
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(LfcError::InvalidParameter {
                name: "capacity",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions in slot order.
    pub fn as_slice(&self) -> &[Transition] {
        &self.storage
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.len() < m || m == 0 {
            return Err(LfcError::InsufficientData(format!(
                "replay buffer holds {} transitions, minibatch needs {m}",
                self.storage.len()
            )));
        }
        Ok((0..m)
            .map(|_| rng.random_range(0..self.storage.len()))
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(m, rng)?
            .into_iter()
            .map(|i| self.storage[i])
            .collect())
    }
}

/// Batch mean of `∂Q/∂a · ∇_θ μ(s)` with `∂Q/∂a` from zeroth-order estimates
/// on the emulator at `a = μ(s)`.
pub fn policy_gradient<R: Rng + ?Sized>(
    actor: &Actor,
    emulator: &Emulator,
    batch: &[Transition],
    zoo: &ZooConfig,
    rng: &mut R,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(LfcError::InsufficientData("empty minibatch".into()));
    }
    let xs: Vec<f64> = batch.iter().flat_map(|t| actor.normalize(&t.obs)).collect();
    let cache = actor.net.forward_cached(&xs, batch.len())?;
    let th: Vec<f64> = cache.output().iter().map(|z| z.tanh()).collect();
    let pairs: Vec<(Observation, f64)> = batch
        .iter()
        .zip(&th)
        .map(|(t, th)| (t.obs, actor.a_max * th))
        .collect();
    let estimates = emulator.predict_and_zoo_batch(&pairs, zoo, rng)?;
    let m = batch.len() as f64;
    let mut upstream = Vec::with_capacity(batch.len());
    for (i, ((pred, grad), th)) in estimates.iter().zip(&th).enumerate() {
        let g = dq_da_from(*pred, *grad);
        if !g.is_finite() {
            return Err(LfcError::NonFinite(format!(
                "action gradient for minibatch transition {i} (prediction {pred}, slope {grad})"
            )));
        }
        upstream.push(g * actor.a_max * (1.0 - th * th) / m);
    }
    let (grads, _) = actor.net.backward_cached(&cache, &upstream)?;
    if !grads.is_finite() {
        return Err(LfcError::NonFinite("policy gradient".into()));
    }
    Ok(grads)
}

/// Disturbances seen during training episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainScenario {
    /// The same disturbance every episode.
    Fixed(Disturbance),
    /// A fresh random step schedule (and wind seed) per episode.
    Randomized {
        level_min: f64,
        level_max: f64,
        wind: Option<WindModel>,
        seed: u64,
    },
}

impl TrainScenario {
    pub fn disturbance(&self, episode: usize, horizon: f64) -> Result<Disturbance> {
        match self {
            TrainScenario::Fixed(d) => Ok(d.clone()),
            TrainScenario::Randomized {
                level_min,
                level_max,
                wind,
                seed,
            } => Ok(Disturbance {
                steps: randomized_training_schedule(
                    mix_seed(*seed, episode, 10),
                    (*level_min, *level_max),
                    horizon,
                )?,
                wind: wind.map(|w| WindModel {
                    seed: mix_seed(*seed, episode, 11),
                    ..w
                }),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// P.
    pub episodes: usize,
    /// M.
    pub minibatch: usize,
    /// η.
    pub learning_rate: f64,
    pub updates_per_step: usize,
    pub buffer_capacity: usize,
    pub zoo: ZooConfig,
    pub noise: OuConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            minibatch: 64,
            learning_rate: 5e-4,
            updates_per_step: 1,
            buffer_capacity: 8000,
            zoo: ZooConfig::default(),
            noise: OuConfig::default(),
            seed: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("episodes", self.episodes),
            ("minibatch", self.minibatch),
            ("updates_per_step", self.updates_per_step),
            ("buffer_capacity", self.buffer_capacity),
        ] {
            if v == 0 {
                return Err(LfcError::InvalidParameter {
                    name,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "learning_rate",
                reason: format!("must be positive, got {}", self.learning_rate),
            });
        }
        self.zoo.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// `−Σ_t |Δf_t|` over the control grid.
    pub reward: f64,
    pub mean_abs_f: f64,
    pub largest_var: f64,
    /// `Σ_t −Δf_t²` over the control grid.
    pub q_sum: f64,
    pub diverged: bool,
    pub updates: usize,
}

pub const TRAIN_LOG_HEADER: &str = "episode,reward,mean_abs_f,largest_var,q_sum,diverged";

pub fn train_log_csv(log: &[EpisodeLog]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for e in log {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            e.episode, e.reward, e.mean_abs_f, e.largest_var, e.q_sum, e.diverged
        ));
    }
    out
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// Called for every stored transition with the plant state behind `t.obs`.
    fn on_transition(
        &mut self,
        _episode: usize,
        _step: usize,
        _state: &PlantState,
        _t: &Transition,
    ) {
    }

    /// Called after every episode; errors abort training.
    fn on_episode(&mut self, _log: &EpisodeLog, _actor: &Actor) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub actor: Actor,
    pub log: Vec<EpisodeLog>,
    pub total_updates: usize,
}

/// The training loop: explore with OU noise, store transitions, and take
/// `updates_per_step` sgd ascent steps along the policy gradient after each
/// control step. The emulator stays frozen.
#[allow(clippy::too_many_arguments)]
pub fn train(
    plant: Plant,
    timing: Timing,
    scenario: &TrainScenario,
    cfg: &TrainConfig,
    actor: Actor,
    emulator: &Emulator,
    prefill: &[Transition],
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    timing.validate()?;
    let mut actor = actor;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    for t in prefill {
        buffer.push(*t);
    }
    let mut noise = OuNoise::new(cfg.noise, mix_seed(cfg.seed, 0, 20))?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0, 21));
    let mut zoo_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0, 22));
    let mut opt = OptimizerState::sgd(cfg.learning_rate)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut total_updates = 0;
    for episode in 1..=cfg.episodes {
        let disturbance = scenario.disturbance(episode, timing.horizon)?;
        let mut env = Environment::new(plant, timing, &disturbance)?;
        let mut obs = env.reset();
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        let mut largest: f64 = 0.0;
        let mut steps = 0usize;
        let mut updates = 0usize;
        let mut diverged = false;
        while !env.is_done() {
            let n = noise.step(timing.control_period);
            let action = actor.act(&obs, n);
            let state = env.state();
            let k = env.step_index();
            let next = match env.step(action) {
                Ok(r) => r,
                Err(LfcError::Diverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let df = next.state.delta_f;
            steps += 1;
            abs_sum += df.abs();
            sq_sum += df * df;
            largest = largest.max(df.abs());
            let t = Transition {
                obs,
                action,
                next_obs: next.obs,
                reward: q_value(df),
            };
            observer.on_transition(episode, k, &state, &t);
            buffer.push(t);
            obs = next.obs;
            for _ in 0..cfg.updates_per_step {
                let batch = buffer.sample(cfg.minibatch, &mut batch_rng)?;
                let grads = policy_gradient(&actor, emulator, &batch, &cfg.zoo, &mut zoo_rng)?;
                actor.apply_update(&mut opt, &grads, Direction::Ascent)?;
                updates += 1;
            }
        }
        noise.end_episode();
        total_updates += updates;
        let entry = EpisodeLog {
            episode,
            reward: -abs_sum,
            mean_abs_f: if steps > 0 {
                abs_sum / steps as f64
            } else {
                0.0
            },
            largest_var: largest,
            q_sum: -sq_sum,
            diverged,
            updates,
        };
        observer.on_episode(&entry, &actor)?;
        log.push(entry);
    }
    Ok(TrainOutcome {
        actor,
        log,
        total_updates,
    })
}
