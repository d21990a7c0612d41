//! Scenario evaluation, metrics, comparison tables, and the file-based pipeline
//! behind the command-line tool.

mod config;
pub mod pipeline;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{Controller, Environment, TrajectoryRow};
use crate::error::{LfcError, Result};

pub use config::*;

/// Integrator-grid record of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    /// Integrator steps per control period.
    pub substeps: usize,
    pub diverged: bool,
}

pub const TRAJECTORY_HEADER: &str = "t,delta_f,delta_pm,delta_pg,delta_pc,delta_pd";

impl Trajectory {
    /// Δf at the end of each completed control period.
    pub fn control_grid_deltas(&self) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(i, _)| *i > 0 && i % self.substeps == 0)
            .map(|(_, r)| r.delta_f)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 140);
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.delta_f, r.delta_pm, r.delta_pg, r.delta_pc, r.delta_pd
            );
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str, substeps: usize) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRAJECTORY_HEADER => {}
            other => {
                return Err(LfcError::parse(
                    origin,
                    "header",
                    format!(
                        "expected `{TRAJECTORY_HEADER}`, got `{}`",
                        other.unwrap_or("")
                    ),
                ))
            }
        }
        let names: Vec<&str> = TRAJECTORY_HEADER.split(',').collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() {
                return Err(LfcError::parse(
                    origin,
                    format!("line {}", n + 2),
                    format!("expected {} fields, got {}", names.len(), fields.len()),
                ));
            }
            let mut v = [0.0; 6];
            for (i, raw) in fields.iter().enumerate() {
                v[i] = raw.trim().parse().map_err(|e| {
                    LfcError::parse(
                        origin,
                        format!("{} (line {})", names[i], n + 2),
                        format!("`{raw}`: {e}"),
                    )
                })?;
            }
            rows.push(TrajectoryRow {
                t: v[0],
                delta_f: v[1],
                delta_pm: v[2],
                delta_pg: v[3],
                delta_pc: v[4],
                delta_pd: v[5],
            });
        }
        Ok(Self {
            rows,
            substeps: substeps.max(1),
            diverged: false,
        })
    }
}

/// Performance indices on the control grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// `Σ_t −Δf_t²`.
    pub q_sum: f64,
    /// Mean |Δf|, Hz.
    pub mean_abs_f: f64,
    /// max |Δf|, Hz.
    pub largest_var: f64,
    /// `R = −Σ_t |Δf_t|`.
    pub reward: f64,
}

impl Metrics {
    pub fn from_deltas(deltas: &[f64]) -> Self {
        if deltas.is_empty() {
            return Self::default();
        }
        let abs_sum: f64 = deltas.iter().map(|d| d.abs()).sum();
        Self {
            q_sum: -deltas.iter().map(|d| d * d).sum::<f64>(),
            mean_abs_f: abs_sum / deltas.len() as f64,
            largest_var: deltas.iter().fold(0.0, |m, d| m.max(d.abs())),
            reward: -abs_sum,
        }
    }
}

pub fn compute_metrics(trajectory: &Trajectory) -> Metrics {
    Metrics::from_deltas(&trajectory.control_grid_deltas())
}

/// Runs one episode, recording every integrator step plus the terminal state.
/// Divergence ends the run early with `diverged` set.
pub fn simulate(env: &mut Environment, controller: &mut dyn Controller) -> Result<Trajectory> {
    let mut obs = env.reset();
    controller.reset();
    let timing = *env.timing();
    let mut rows = Vec::with_capacity(timing.total_substeps() + 1);
    let mut last_action = 0.0;
    while !env.is_done() {
        last_action = controller.act(&obs);
        match env.step_recorded(last_action, &mut rows) {
            Ok(r) => obs = r.obs,
            Err(LfcError::Diverged { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    if !env.diverged() {
        let n = timing.total_substeps();
        let s = env.state();
        rows.push(TrajectoryRow {
            t: n as f64 * timing.dt,
            delta_f: s.delta_f,
            delta_pm: s.delta_pm,
            delta_pg: s.delta_pg,
            delta_pc: last_action,
            delta_pd: env.signal()[n],
        });
    }
    Ok(Trajectory {
        rows,
        substeps: timing.substeps(),
        diverged: env.diverged(),
    })
}

/// Closed-loop run of `controller` on the configured plant and scenario.
pub fn run_episode(cfg: &RunConfig, controller: &mut dyn Controller) -> Result<Trajectory> {
    let mut env = Environment::new(cfg.plant()?, cfg.timing(), &cfg.disturbance()?)?;
    simulate(&mut env, controller)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: BTreeMap<String, CompareRow>,
    pub trajectories: BTreeMap<String, Trajectory>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rows).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// Runs every controller against the same ΔP_d samples held by `env`.
pub fn compare(
    env: &Environment,
    controllers: &mut [(String, Box<dyn Controller>)],
) -> Result<Comparison> {
    if controllers.len() < 2 {
        return Err(LfcError::InvalidParameter {
            name: "controllers",
            reason: format!("need at least 2, got {}", controllers.len()),
        });
    }
    let mut rows = BTreeMap::new();
    let mut trajectories = BTreeMap::new();
    for (name, c) in controllers.iter_mut() {
        let mut env = env.clone();
        let traj = simulate(&mut env, c.as_mut())?;
        rows.insert(
            name.clone(),
            CompareRow {
                metrics: compute_metrics(&traj),
                diverged: traj.diverged,
            },
        );
        trajectories.insert(name.clone(), traj);
    }
    Ok(Comparison { rows, trajectories })
}

/// Process exit code for an error: 2 for configuration and input problems,
/// 3 for divergence and numerical aborts.
pub fn exit_code(err: &LfcError) -> i32 {
    match err {
        LfcError::Config { .. }
        | LfcError::Parse { .. }
        | LfcError::MissingFile(_)
        | LfcError::InvalidParameter { .. }
        | LfcError::Io { .. } => 2,
        LfcError::Diverged { .. }
        | LfcError::NonFinite(_)
        | LfcError::TuningFailed
        | LfcError::InsufficientData(_)
        | LfcError::DimensionMismatch { .. }
        | LfcError::InvalidState(_) => 3,
    }
}
