//! File-based pipeline stages. Every stage reads its inputs from and writes its
//! outputs to `output.dir`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::*;
use crate::agent::{
    self, pretrain_actor, train_log_csv, transitions_from_records, Actor, EpisodeLog,
    PretrainOutcome, TrainObserver, TrainOutcome,
};
use crate::emulator::{train_emulator, Emulator, EmulatorTraining, EpochLoss};
use crate::env::{Environment, OpenLoop};
use crate::pid::{generate_database, tune_pid, LfcDatabase, PidController, PidGains, TuneResult};
use crate::scenario::Disturbance;

fn ensure_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| LfcError::io(&cfg.output.dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| LfcError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct GainsFile {
    kp: f64,
    ki: f64,
    kd: f64,
    cost: f64,
    evaluated: usize,
    diverged: usize,
}

/// Grid search on the linear plant under the configured step schedule
/// (wind off). Writes `pid_gains.toml`.
pub fn tune(cfg: &RunConfig) -> Result<TuneResult> {
    ensure_dir(cfg)?;
    let scenario = Disturbance::steps_only(cfg.scenario.schedule()?);
    let mut env = Environment::new(cfg.linear_plant()?, cfg.timing(), &scenario)?;
    let result = tune_pid(&mut env, &cfg.tune, cfg.pid.a_max)?;
    let file = GainsFile {
        kp: result.gains.kp,
        ki: result.gains.ki,
        kd: result.gains.kd,
        cost: result.cost,
        evaluated: result.evaluated,
        diverged: result.diverged,
    };
    write(
        &cfg.out(GAINS_FILE),
        &toml::to_string(&file).expect("gains serialize"),
    )?;
    Ok(result)
}

/// PID gains per `pid.gains`.
pub fn gains(cfg: &RunConfig) -> Result<PidGains> {
    match cfg.pid.gains {
        GainSource::Config => Ok(cfg.config_gains()),
        GainSource::Tuned => {
            let path = cfg.out(GAINS_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| LfcError::io(&path, e))?;
            let f: GainsFile = toml::from_str(&text).map_err(|e| {
                LfcError::parse(path.display().to_string(), "gains", e.message().to_string())
            })?;
            Ok(PidGains::new(f.kp, f.ki, f.kd))
        }
    }
}

/// Writes the exploration database (`lfc_db.csv`) and the noise-free
/// demonstration database (`pid_db.csv`).
pub fn gen_db(cfg: &RunConfig) -> Result<(LfcDatabase, LfcDatabase)> {
    ensure_dir(cfg)?;
    let g = gains(cfg)?;
    let plant = cfg.plant()?;
    let timing = cfg.timing();
    let explore = generate_database(
        plant,
        timing,
        g,
        cfg.pid.a_max,
        &cfg.database_config(cfg.database.noise_std),
    )?;
    let demo = generate_database(plant, timing, g, cfg.pid.a_max, &cfg.database_config(0.0))?;
    if explore.is_empty() || demo.is_empty() {
        return Err(LfcError::InsufficientData(
            "every database episode diverged; check the PID gains".into(),
        ));
    }
    explore.save(&cfg.out(EMULATOR_DB_FILE))?;
    demo.save(&cfg.out(PID_DB_FILE))?;
    Ok((explore, demo))
}

fn epoch_log_csv(log: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for e in log {
        let _ = writeln!(out, "{},{:.16e},{:.16e}", e.epoch, e.train, e.validation);
    }
    out
}

/// Fits the emulator to `lfc_db.csv`; writes `emulator.txt` and its loss log.
pub fn train_emulator_stage(cfg: &RunConfig) -> Result<EmulatorTraining> {
    ensure_dir(cfg)?;
    let db = LfcDatabase::load(&cfg.out(EMULATOR_DB_FILE))?;
    let out = train_emulator(&db.records, &cfg.emulator)?;
    out.emulator.save(&cfg.out(EMULATOR_FILE))?;
    write(&cfg.out(EMULATOR_LOG_FILE), &epoch_log_csv(&out.log))?;
    Ok(out)
}

/// Clones the PID from `pid_db.csv`; writes `actor_pretrained.txt` and its loss log.
pub fn pretrain_stage(cfg: &RunConfig) -> Result<PretrainOutcome> {
    ensure_dir(cfg)?;
    let db = LfcDatabase::load(&cfg.out(PID_DB_FILE))?;
    let out = pretrain_actor(&db.records, &cfg.pretrain)?;
    out.actor
        .save(&cfg.out(PRETRAINED_FILE), &BTreeMap::new())?;
    write(&cfg.out(PRETRAIN_LOG_FILE), &epoch_log_csv(&out.log))?;
    Ok(out)
}

struct StageObserver<'a> {
    dir: PathBuf,
    every: usize,
    progress: &'a mut dyn FnMut(&EpisodeLog),
}

impl TrainObserver for StageObserver<'_> {
    fn on_episode(&mut self, log: &EpisodeLog, actor: &Actor) -> Result<()> {
        (self.progress)(log);
        if self.every > 0 && log.episode % self.every == 0 {
            let mut meta = BTreeMap::new();
            meta.insert("episode".to_string(), log.episode.to_string());
            actor.save(
                &self.dir.join(format!("actor_ep{}.txt", log.episode)),
                &meta,
            )?;
        }
        Ok(())
    }
}

/// Actor training from `actor_pretrained.txt` with the frozen `emulator.txt`
/// and a replay buffer prefilled from `lfc_db.csv`. Writes `actor.txt` and
/// `train_log.csv`.
pub fn train_stage(cfg: &RunConfig, progress: &mut dyn FnMut(&EpisodeLog)) -> Result<TrainOutcome> {
    ensure_dir(cfg)?;
    let actor = Actor::load(&cfg.out(PRETRAINED_FILE))?;
    let emulator = Emulator::load(&cfg.out(EMULATOR_FILE))?;
    let db = LfcDatabase::load(&cfg.out(EMULATOR_DB_FILE))?;
    let prefill = transitions_from_records(&db.records, cfg.sim.control_period);
    let mut observer = StageObserver {
        dir: cfg.output.dir.clone(),
        every: cfg.train.checkpoint_every,
        progress,
    };
    let out = agent::train(
        cfg.plant()?,
        cfg.timing(),
        &cfg.train_scenario()?,
        &cfg.train_config(),
        actor,
        &emulator,
        &prefill,
        &mut observer,
    )?;
    let mut meta = BTreeMap::new();
    meta.insert("episodes".to_string(), cfg.train.episodes.to_string());
    out.actor.save(&cfg.out(ACTOR_FILE), &meta)?;
    write(&cfg.out(TRAIN_LOG_FILE), &train_log_csv(&out.log))?;
    Ok(out)
}

/// Builds a named controller: `open_loop`, `pid`, `pretrained`, or `actor`.
pub fn controller(cfg: &RunConfig, name: &str) -> Result<Box<dyn Controller>> {
    Ok(match name {
        "open_loop" => Box::new(OpenLoop),
        "pid" => Box::new(PidController {
            gains: gains(cfg)?,
            a_max: cfg.pid.a_max,
        }),
        "pretrained" => Box::new(Actor::load(&cfg.out(PRETRAINED_FILE))?),
        "actor" => Box::new(Actor::load(&cfg.checkpoint_path())?),
        other => {
            return Err(LfcError::config(
                "compare.controllers",
                format!("unknown controller `{other}`"),
            ))
        }
    })
}

fn selected_name(cfg: &RunConfig) -> &'static str {
    match cfg.controller.kind {
        ControllerKind::OpenLoop => "open_loop",
        ControllerKind::Pid => "pid",
        ControllerKind::Actor => "actor",
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub name: String,
    pub trajectory: Trajectory,
    pub metrics: Metrics,
    pub trajectory_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Runs `controller.kind` on the scenario; writes `trajectory_<name>.csv` and
/// `metrics_<name>.json`. A diverged run still writes its partial trajectory.
pub fn evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let name = selected_name(cfg);
    let mut c = controller(cfg, name)?;
    ensure_dir(cfg)?;
    let trajectory = run_episode(cfg, c.as_mut())?;
    let metrics = compute_metrics(&trajectory);
    let trajectory_path = cfg.out(&format!("trajectory_{name}.csv"));
    let metrics_path = cfg.out(&format!("metrics_{name}.json"));
    write(&trajectory_path, &trajectory.to_csv())?;
    let mut table = BTreeMap::new();
    table.insert(
        name.to_string(),
        CompareRow {
            metrics,
            diverged: trajectory.diverged,
        },
    );
    write(
        &metrics_path,
        &(serde_json::to_string_pretty(&table).expect("metrics serialize") + "\n"),
    )?;
    Ok(Evaluation {
        name: name.to_string(),
        trajectory,
        metrics,
        trajectory_path,
        metrics_path,
    })
}

/// Runs `compare.controllers` on one shared ΔP_d sample path; writes
/// `compare.json` and one trajectory CSV per controller.
pub fn compare_stage(cfg: &RunConfig) -> Result<Comparison> {
    let mut controllers = cfg
        .compare
        .controllers
        .iter()
        .map(|n| Ok((n.clone(), controller(cfg, n)?)))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(cfg)?;
    let env = Environment::new(cfg.plant()?, cfg.timing(), &cfg.disturbance()?)?;
    let cmp = compare(&env, &mut controllers)?;
    write(&cfg.out(COMPARE_FILE), &cmp.to_json())?;
    for (name, traj) in &cmp.trajectories {
        write(&cfg.out(&format!("trajectory_{name}.csv")), &traj.to_csv())?;
    }
    Ok(cmp)
}

fn column_table(cmp: &Comparison, pick: fn(&TrajectoryRow) -> f64, dt: f64) -> String {
    let names: Vec<&String> = cmp.trajectories.keys().collect();
    let n = cmp
        .trajectories
        .values()
        .map(|t| t.rows.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from("t");
    for name in &names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "{:.16e}", i as f64 * dt);
        for name in &names {
            out.push(',');
            if let Some(r) = cmp.trajectories[*name].rows.get(i) {
                let _ = write!(out, "{:.16e}", pick(r));
            }
        }
        out.push('\n');
    }
    out
}

/// Figure data: reward per episode (from `train_log.csv` when present) and
/// Δf / ΔP_m time series per compared controller.
pub fn plot_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let log_path = cfg.out(TRAIN_LOG_FILE);
    if log_path.exists() {
        let text = std::fs::read_to_string(&log_path).map_err(|e| LfcError::io(&log_path, e))?;
        let mut out = String::from("episode,reward\n");
        for (n, line) in text.lines().enumerate().skip(1) {
            let mut f = line.split(',');
            match (f.next(), f.next()) {
                (Some(e), Some(r)) => {
                    let _ = writeln!(out, "{e},{r}");
                }
                _ => {
                    return Err(LfcError::parse(
                        log_path.display().to_string(),
                        format!("line {}", n + 1),
                        "expected episode and reward columns",
                    ))
                }
            }
        }
        let p = cfg.out("fig_reward.csv");
        write(&p, &out)?;
        written.push(p);
    }
    let cmp = compare_stage(cfg)?;
    for (file, pick) in [
        (
            "fig_delta_f.csv",
            (|r: &TrajectoryRow| r.delta_f) as fn(&TrajectoryRow) -> f64,
        ),
        ("fig_delta_pm.csv", |r: &TrajectoryRow| r.delta_pm),
    ] {
        let p = cfg.out(file);
        write(&p, &column_table(&cmp, pick, cfg.sim.dt))?;
        written.push(p);
    }
    Ok(written)
}

/// tune-pid → gen-db → train-emulator → pretrain-actor → train → compare.
/// Returns the comparison JSON.
pub fn run_all(cfg: &RunConfig, progress: &mut dyn FnMut(&EpisodeLog)) -> Result<String> {
    if cfg.pid.gains == GainSource::Tuned {
        tune(cfg)?;
    }
    gen_db(cfg)?;
    train_emulator_stage(cfg)?;
    pretrain_stage(cfg)?;
    train_stage(cfg, progress)?;
    Ok(compare_stage(cfg)?.to_json())
}
