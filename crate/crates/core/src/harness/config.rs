//! Run configuration: TOML with dotted keys, every key optional, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::agent::{Actor, OuConfig, PretrainConfig, TrainConfig, TrainScenario};
use crate::emulator::{EmulatorConfig, ZooConfig};
use crate::env::Timing;
use crate::error::{LfcError, Result};
use crate::pid::{DatabaseConfig, PidGains, TuneGrid};
use crate::plant::{Nonlinearity, Plant, PlantParams, DEFAULT_F_MAX};
use crate::scenario::{Disturbance, StepSchedule, WindModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub control_period: f64,
    pub horizon: f64,
    /// Runs are aborted once |Δf| exceeds this, Hz.
    pub f_max: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let t = Timing::default();
        Self {
            dt: t.dt,
            control_period: t.control_period,
            horizon: t.horizon,
            f_max: DEFAULT_F_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// `[time, level]` pairs, s and p.u.
    pub steps: Vec<[f64; 2]>,
    pub wind: bool,
    pub wind_rated: f64,
    pub wind_correlation_time: f64,
    pub wind_volatility: f64,
    pub wind_seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let w = WindModel::default();
        Self {
            steps: StepSchedule::benchmark()
                .events()
                .iter()
                .map(|&(t, l)| [t, l])
                .collect(),
            wind: false,
            wind_rated: w.rated,
            wind_correlation_time: w.correlation_time,
            wind_volatility: w.volatility,
            wind_seed: w.seed,
        }
    }
}

impl ScenarioSection {
    pub fn wind_model(&self) -> WindModel {
        WindModel {
            rated: self.wind_rated,
            correlation_time: self.wind_correlation_time,
            volatility: self.wind_volatility,
            seed: self.wind_seed,
        }
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.steps.iter().map(|&[t, l]| (t, l)).collect())
            .map_err(|e| LfcError::config("scenario.steps", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    OpenLoop,
    Pid,
    Actor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    /// Actor checkpoint; empty means `<output.dir>/actor.txt`.
    pub checkpoint: String,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Pid,
            checkpoint: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    /// Read from `<output.dir>/pid_gains.toml` written by `tune-pid`.
    Tuned,
    /// Use `pid.kp`, `pid.ki`, `pid.kd`.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidSection {
    pub gains: GainSource,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub a_max: f64,
}

impl Default for PidSection {
    fn default() -> Self {
        Self {
            gains: GainSource::Tuned,
            kp: 0.1,
            ki: 1.9,
            kd: 0.5,
            a_max: crate::pid::DEFAULT_A_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatabaseSection {
    pub episodes: usize,
    /// Exploration noise for the emulator database, p.u.
    pub noise_std: f64,
    pub seed: u64,
    pub level_min: f64,
    pub level_max: f64,
    /// Add wind (with the `scenario.wind_*` parameters) to every episode.
    pub wind: bool,
}

impl Default for DatabaseSection {
    fn default() -> Self {
        let d = DatabaseConfig::default();
        Self {
            episodes: d.n_episodes,
            noise_std: d.noise_std,
            seed: d.seed,
            level_min: d.level_min,
            level_max: d.level_max,
            wind: d.wind.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScenarioKind {
    /// The `scenario` section every episode.
    Benchmark,
    /// Random steps drawn like the database episodes.
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub updates_per_step: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub scenario: TrainScenarioKind,
    /// Write `actor_ep<N>.txt` every N episodes; 0 disables.
    pub checkpoint_every: usize,
    pub zoo: ZooConfig,
    pub noise: OuConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            episodes: t.episodes,
            minibatch: t.minibatch,
            learning_rate: t.learning_rate,
            updates_per_step: t.updates_per_step,
            buffer_capacity: t.buffer_capacity,
            seed: t.seed,
            scenario: TrainScenarioKind::Benchmark,
            checkpoint_every: 0,
            zoo: t.zoo,
            noise: t.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Any of `open_loop`, `pid`, `pretrained`, `actor`.
    pub controllers: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            controllers: ["open_loop", "pid", "pretrained", "actor"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub nonlinearity: Nonlinearity,
    pub sim: SimSection,
    pub scenario: ScenarioSection,
    pub controller: ControllerSection,
    pub pid: PidSection,
    pub tune: TuneGrid,
    pub database: DatabaseSection,
    pub emulator: EmulatorConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainSection,
    pub compare: CompareSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            nonlinearity: Nonlinearity::benchmark(),
            sim: SimSection::default(),
            scenario: ScenarioSection::default(),
            controller: ControllerSection::default(),
            pid: PidSection::default(),
            tune: TuneGrid::default(),
            database: DatabaseSection::default(),
            emulator: EmulatorConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainSection::default(),
            compare: CompareSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Reports the first key of `given` absent from `known`, as a dotted path.
fn unknown_key(given: &Table, known: &Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (v, known.get(k)) {
            (_, None) => return Some(path),
            (Value::Table(g), Some(Value::Table(kn))) => {
                if let Some(p) = unknown_key(g, kn, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

/// Overlays `over` onto `base`, recursing into tables.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn insert_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LfcError::config(key, "malformed key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(LfcError::config(key, format!("`{p}` is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_override_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_at(table: &mut Table, path: &[String], value: Value) {
    match path {
        [] => {}
        [last] => {
            table.insert(last.clone(), value);
        }
        [head, rest @ ..] => {
            if let Some(Value::Table(t)) = table.get_mut(head) {
                set_at(t, rest, value);
            }
        }
    }
}

/// Finds the first user key that alone makes the section fail to deserialize.
fn bad_key<T: DeserializeOwned>(
    base: &Table,
    given: &Table,
    path: &mut Vec<String>,
) -> Option<String> {
    for (k, v) in given {
        path.push(k.clone());
        let nested = path
            .iter()
            .try_fold(base, |t, p| t.get(p).and_then(Value::as_table));
        let found = match (v, nested) {
            (Value::Table(sub), Some(_)) => bad_key::<T>(base, sub, path),
            _ => {
                let mut t = base.clone();
                set_at(&mut t, path, v.clone());
                Value::Table(t)
                    .try_into::<T>()
                    .err()
                    .map(|_| path.join("."))
            }
        };
        path.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

fn take_section<T: DeserializeOwned>(
    section: &str,
    value: Value,
    base: Option<&Table>,
    given: Option<&Table>,
) -> Result<T> {
    value.try_into().map_err(|e: toml::de::Error| {
        let key = match (base, given) {
            (Some(b), Some(g)) => bad_key::<T>(b, g, &mut Vec::new())
                .map_or_else(|| section.to_string(), |k| format!("{section}.{k}")),
            _ => section.to_string(),
        };
        LfcError::config(key, e.message().to_string())
    })
}

impl RunConfig {
    /// Parses TOML text and `key=value` overrides.
    pub fn from_toml(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| LfcError::config(origin, e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| LfcError::config(o.clone(), "override must look like key=value"))?;
            insert_dotted(&mut table, k.trim(), parse_override_value(v.trim()))?;
        }
        let known: Table = Value::try_from(RunConfig::default())
            .ok()
            .and_then(|v| v.as_table().cloned())
            .expect("default config serializes to a table");
        if let Some(key) = unknown_key(&table, &known, "") {
            return Err(LfcError::config(key, "unknown key"));
        }
        let defaults = known.clone();
        let mut merged = known;
        merge(&mut merged, table.clone());
        let mut cfg = RunConfig::default();
        for (section, value) in merged {
            let base = defaults.get(&section).and_then(Value::as_table);
            let given = table.get(&section).and_then(Value::as_table);
            macro_rules! take {
                ($field:ident) => {
                    cfg.$field = take_section(&section, value, base, given)?
                };
            }
            match section.as_str() {
                "plant" => take!(plant),
                "nonlinearity" => take!(nonlinearity),
                "sim" => take!(sim),
                "scenario" => take!(scenario),
                "controller" => take!(controller),
                "pid" => take!(pid),
                "tune" => take!(tune),
                "database" => take!(database),
                "emulator" => take!(emulator),
                "pretrain" => take!(pretrain),
                "train" => take!(train),
                "compare" => take!(compare),
                "output" => take!(output),
                _ => return Err(LfcError::config(section, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LfcError::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, e: LfcError| match e {
            LfcError::InvalidParameter { name, reason } => {
                LfcError::config(format!("{section}.{name}"), reason)
            }
            other => other,
        };
        self.plant.validate().map_err(|e| wrap("plant", e))?;
        self.nonlinearity
            .validate()
            .map_err(|e| wrap("nonlinearity", e))?;
        self.timing().validate().map_err(|e| wrap("sim", e))?;
        if !(self.sim.f_max.is_finite() && self.sim.f_max > 0.0) {
            return Err(LfcError::config("sim.f_max", "must be positive"));
        }
        self.scenario.schedule()?;
        if self.scenario.wind {
            self.scenario
                .wind_model()
                .validate()
                .map_err(|e| wrap("scenario", e))?;
        }
        if !(self.pid.a_max.is_finite() && self.pid.a_max > 0.0) {
            return Err(LfcError::config("pid.a_max", "must be positive"));
        }
        self.emulator.validate().map_err(|e| wrap("emulator", e))?;
        self.train_config()
            .validate()
            .map_err(|e| wrap("train", e))?;
        self.train
            .zoo
            .validate()
            .map_err(|e| wrap("train.zoo", e))?;
        for c in &self.compare.controllers {
            if !["open_loop", "pid", "pretrained", "actor"].contains(&c.as_str()) {
                return Err(LfcError::config(
                    "compare.controllers",
                    format!("unknown controller `{c}`"),
                ));
            }
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        Timing {
            dt: self.sim.dt,
            control_period: self.sim.control_period,
            horizon: self.sim.horizon,
        }
    }

    pub fn plant(&self) -> Result<Plant> {
        Ok(Plant::new(self.plant, self.nonlinearity)?.with_f_max(self.sim.f_max))
    }

    /// The configured plant without dead band or rate limit.
    pub fn linear_plant(&self) -> Result<Plant> {
        Ok(Plant::new(self.plant, Nonlinearity::linear())?.with_f_max(self.sim.f_max))
    }

    pub fn disturbance(&self) -> Result<Disturbance> {
        Ok(Disturbance {
            steps: self.scenario.schedule()?,
            wind: self.scenario.wind.then(|| self.scenario.wind_model()),
        })
    }

    pub fn config_gains(&self) -> PidGains {
        PidGains::new(self.pid.kp, self.pid.ki, self.pid.kd)
    }

    pub fn database_config(&self, noise_std: f64) -> DatabaseConfig {
        DatabaseConfig {
            n_episodes: self.database.episodes,
            noise_std,
            seed: self.database.seed,
            level_min: self.database.level_min,
            level_max: self.database.level_max,
            wind: self.database.wind.then(|| self.scenario.wind_model()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            episodes: t.episodes,
            minibatch: t.minibatch,
            learning_rate: t.learning_rate,
            updates_per_step: t.updates_per_step,
            buffer_capacity: t.buffer_capacity,
            zoo: t.zoo,
            noise: t.noise,
            seed: t.seed,
        }
    }

    pub fn train_scenario(&self) -> Result<TrainScenario> {
        Ok(match self.train.scenario {
            TrainScenarioKind::Benchmark => TrainScenario::Fixed(self.disturbance()?),
            TrainScenarioKind::Randomized => TrainScenario::Randomized {
                level_min: self.database.level_min,
                level_max: self.database.level_max,
                wind: self.database.wind.then(|| self.scenario.wind_model()),
                seed: self.train.seed,
            },
        })
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output.dir.join(file)
    }

    /// Actor checkpoint named by `controller.checkpoint`.
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.controller.checkpoint.is_empty() {
            self.out(ACTOR_FILE)
        } else {
            PathBuf::from(&self.controller.checkpoint)
        }
    }

    pub fn load_actor(&self, path: &Path) -> Result<Actor> {
        Actor::load(path)
    }
}

pub const GAINS_FILE: &str = "pid_gains.toml";
pub const EMULATOR_DB_FILE: &str = "lfc_db.csv";
pub const PID_DB_FILE: &str = "pid_db.csv";
pub const EMULATOR_FILE: &str = "emulator.txt";
pub const EMULATOR_LOG_FILE: &str = "emulator_log.csv";
pub const PRETRAINED_FILE: &str = "actor_pretrained.txt";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";
pub const ACTOR_FILE: &str = "actor.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const COMPARE_FILE: &str = "compare.json";
