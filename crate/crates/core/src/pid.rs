//! PID baseline, exhaustive gain search, and the LFC database logged from
//! PID closed loops.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_cost, Controller, Environment, Timing};
use crate::error::{LfcError, Result};
use crate::plant::{observe, Nonlinearity, Observation, Plant, PlantParams, PlantState};
use crate::scenario::{randomized_training_schedule, Disturbance, WindModel};

/// Default bound on the generation command, p.u.
pub const DEFAULT_A_MAX: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }
}

/// `ΔP_c = −(kp·Δf + ki·∫Δf + kd·dΔf/dt)`, clipped to `[−a_max, a_max]`.
pub fn pid_control(obs: &Observation, gains: &PidGains, a_max: f64) -> f64 {
    let raw = -(gains.kp * obs.f_dev + gains.ki * obs.f_int + gains.kd * obs.f_der);
    raw.clamp(-a_max, a_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub a_max: f64,
}

impl Controller for PidController {
    fn act(&mut self, obs: &Observation) -> f64 {
        pid_control(obs, &self.gains, self.a_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
}

fn linspace_step(start: f64, step: f64, count: usize) -> Vec<f64> {
    // Rounded to the grid's decimal resolution so the values print cleanly.
    (0..count)
        .map(|i| ((start + i as f64 * step) * 1e6).round() / 1e6)
        .collect()
}

impl Default for TuneGrid {
    /// kp, ki ∈ {0.1, …, 2.0}; kd ∈ {0, 0.05, …, 0.5}.
    fn default() -> Self {
        Self {
            kp: linspace_step(0.1, 0.1, 20),
            ki: linspace_step(0.1, 0.1, 20),
            kd: linspace_step(0.0, 0.05, 11),
        }
    }
}

impl TuneGrid {
    pub fn len(&self) -> usize {
        self.kp.len() * self.ki.len() * self.kd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates in lexicographic (kp, ki, kd) order.
    pub fn candidates(&self) -> Vec<PidGains> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        let (kp, ki, kd) = (sorted(&self.kp), sorted(&self.ki), sorted(&self.kd));
        let mut out = Vec::with_capacity(self.len());
        for &p in &kp {
            for &i in &ki {
                for &d in &kd {
                    out.push(PidGains::new(p, i, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneResult {
    pub gains: PidGains,
    /// Σ|Δf| over the control grid.
    pub cost: f64,
    pub evaluated: usize,
    pub diverged: usize,
}

/// Exhaustive grid search minimising Σ|Δf| on `env`'s scenario. Ties keep the
/// lexicographically smaller gains.
pub fn tune_pid(env: &mut Environment, grid: &TuneGrid, a_max: f64) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(LfcError::InvalidParameter {
            name: "grid",
            reason: "search grid is empty".into(),
        });
    }
    let mut best: Option<(PidGains, f64)> = None;
    let mut diverged = 0;
    for gains in grid.candidates() {
        let mut pid = PidController { gains, a_max };
        match rollout_cost(env, &mut pid)? {
            Some(cost) => {
                if best.map_or(true, |(_, c)| cost < c) {
                    best = Some((gains, cost));
                }
            }
            None => diverged += 1,
        }
    }
    let (gains, cost) = best.ok_or(LfcError::TuningFailed)?;
    Ok(TuneResult {
        gains,
        cost,
        evaluated: grid.len(),
        diverged,
    })
}

/// Settings for logging PID closed loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseConfig {
    pub n_episodes: usize,
    /// Std of the Gaussian perturbation added to logged actions, p.u.
    pub noise_std: f64,
    pub seed: u64,
    /// Bounds of the random step levels, p.u.
    pub level_min: f64,
    pub level_max: f64,
    /// Wind template; each episode gets its own seed.
    pub wind: Option<WindModel>,
}

impl Default for DatabaseConfig {
    fn default() -> Self {
        Self {
            n_episodes: 40,
            noise_std: 0.01,
            seed: 1,
            level_min: -0.03,
            level_max: 0.03,
            wind: Some(WindModel::default()),
        }
    }
}

/// Everything needed to reproduce a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseMeta {
    pub plant: PlantParams,
    pub nonlinearity: Nonlinearity,
    pub f_max: f64,
    pub timing: Timing,
    pub gains: PidGains,
    pub a_max: f64,
    pub config: DatabaseConfig,
    /// Episodes dropped because they diverged.
    pub dropped: Vec<usize>,
    pub records: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbRecord {
    pub obs: Observation,
    pub action: f64,
    /// Δf one control period after `action` was applied.
    pub next_delta_f: f64,
}

impl DbRecord {
    /// Observation one control period later.
    pub fn next_obs(&self, control_period: f64) -> Observation {
        observe(
            self.next_delta_f,
            self.obs.f_int,
            self.obs.f_dev,
            control_period,
        )
    }
}

/// Where a freshly generated record came from. Not persisted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordOrigin {
    pub episode: usize,
    pub step: usize,
    pub state: PlantState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfcDatabase {
    pub records: Vec<DbRecord>,
    /// Parallel to `records` for generated databases; empty after loading from disk.
    pub origins: Vec<RecordOrigin>,
    pub meta: DatabaseMeta,
}

pub const DATABASE_HEADER: &str = "f_dev,f_int,f_der,action,next_f_dev";

pub(crate) fn mix_seed(seed: u64, episode: usize, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed
        .wrapping_add((episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The disturbance used for `episode` of a database described by `meta`.
pub fn episode_disturbance(meta: &DatabaseMeta, episode: usize) -> Result<Disturbance> {
    let cfg = &meta.config;
    let steps = randomized_training_schedule(
        mix_seed(cfg.seed, episode, 0),
        (cfg.level_min, cfg.level_max),
        meta.timing.horizon,
    )?;
    let wind = cfg.wind.map(|w| WindModel {
        seed: mix_seed(cfg.seed, episode, 1),
        ..w
    });
    Ok(Disturbance { steps, wind })
}

/// Runs `n_episodes` PID closed loops on randomized schedules and logs
/// `(observation, applied action, next Δf)` for every control step.
pub fn generate_database(
    plant: Plant,
    timing: Timing,
    gains: PidGains,
    a_max: f64,
    cfg: &DatabaseConfig,
) -> Result<LfcDatabase> {
    if cfg.n_episodes == 0 {
        return Err(LfcError::InvalidParameter {
            name: "n_episodes",
            reason: "must be at least 1".into(),
        });
    }
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
        return Err(LfcError::InvalidParameter {
            name: "noise_std",
            reason: format!("must be >= 0, got {}", cfg.noise_std),
        });
    }
    timing.validate()?;
    let mut meta = DatabaseMeta {
        plant: plant.params,
        nonlinearity: plant.nonlinearity,
        f_max: plant.f_max,
        timing,
        gains,
        a_max,
        config: cfg.clone(),
        dropped: Vec::new(),
        records: 0,
    };
    let mut records = Vec::new();
    let mut origins = Vec::new();
    for episode in 0..cfg.n_episodes {
        let disturbance = episode_disturbance(&meta, episode)?;
        let mut env = Environment::new(plant, timing, &disturbance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, episode, 2));
        let mut obs = env.reset();
        let mut ep_records = Vec::with_capacity(timing.control_steps());
        let mut ep_origins = Vec::with_capacity(timing.control_steps());
        let mut diverged = false;
        while !env.is_done() {
            let mut action = pid_control(&obs, &gains, a_max);
            if cfg.noise_std > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                action = (action + cfg.noise_std * z).clamp(-a_max, a_max);
            }
            let origin = RecordOrigin {
                episode,
                step: env.step_index(),
                state: env.state(),
            };
            match env.step(action) {
                Ok(r) => {
                    ep_records.push(DbRecord {
                        obs,
                        action,
                        next_delta_f: r.state.delta_f,
                    });
                    ep_origins.push(origin);
                    obs = r.obs;
                }
                Err(LfcError::Diverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if diverged {
            meta.dropped.push(episode);
        } else {
            records.extend(ep_records);
            origins.extend(ep_origins);
        }
    }
    meta.records = records.len();
    Ok(LfcDatabase {
        records,
        origins,
        meta,
    })
}

/// Sibling metadata path: `db.csv` → `db.meta.toml`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

impl LfcDatabase {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 120);
        out.push_str(DATABASE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.obs.f_dev, r.obs.f_int, r.obs.f_der, r.action, r.next_delta_f
            );
        }
        out
    }

    /// Writes the CSV and its `.meta.toml` sibling.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| LfcError::io(csv_path, e))?;
        let meta_path = metadata_path(csv_path);
        let meta = toml::to_string(&self.meta).map_err(|e| {
            LfcError::parse(meta_path.display().to_string(), "metadata", e.to_string())
        })?;
        std::fs::write(&meta_path, meta).map_err(|e| LfcError::io(&meta_path, e))
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let origin = csv_path.display().to_string();
        let text = std::fs::read_to_string(csv_path).map_err(|e| LfcError::io(csv_path, e))?;
        let records = parse_database_csv(&text, &origin)?;
        let meta_path = metadata_path(csv_path);
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|e| LfcError::io(&meta_path, e))?;
        let meta: DatabaseMeta = toml::from_str(&meta_text).map_err(|e| {
            LfcError::parse(meta_path.display().to_string(), "metadata", e.to_string())
        })?;
        Ok(Self {
            records,
            origins: Vec::new(),
            meta,
        })
    }
}

pub fn parse_database_csv(text: &str, origin: &str) -> Result<Vec<DbRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == DATABASE_HEADER => {}
        other => {
            return Err(LfcError::parse(
                origin,
                "header",
                format!(
                    "expected `{DATABASE_HEADER}`, got `{}`",
                    other.unwrap_or("")
                ),
            ))
        }
    }
    let columns: Vec<&str> = DATABASE_HEADER.split(',').collect();
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(LfcError::parse(
                origin,
                format!("line {}", n + 2),
                format!("expected {} fields, got {}", columns.len(), fields.len()),
            ));
        }
        let mut v = [0.0; 5];
        for (i, raw) in fields.iter().enumerate() {
            v[i] = raw.trim().parse().map_err(|e| {
                LfcError::parse(
                    origin,
                    format!("{} (line {})", columns[i], n + 2),
                    format!("`{raw}`: {e}"),
                )
            })?;
        }
        records.push(DbRecord {
            obs: Observation::new(v[0], v[1], v[2]),
            action: v[3],
            next_delta_f: v[4],
        });
    }
    Ok(records)
}
