//! Closed-loop episode stepping: the plant is integrated at `dt` while the
//! controller output is held for one control period.

use serde::{Deserialize, Serialize};

use crate::error::{LfcError, Result};
use crate::plant::{Observation, ObservationFilter, Plant, PlantState};
use crate::scenario::Disturbance;

/// Integrator step, control period and episode length, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub dt: f64,
    pub control_period: f64,
    pub horizon: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            dt: 0.01,
            control_period: 0.1,
            horizon: 20.0,
        }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    ((r - n).abs() < 1e-9 * n.max(1.0) && n >= 1.0).then_some(n as usize)
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("control_period", self.control_period),
            ("horizon", self.horizon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LfcError::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if integer_ratio(self.control_period, self.dt).is_none() {
            return Err(LfcError::InvalidParameter {
                name: "control_period",
                reason: format!("must be a multiple of dt = {}", self.dt),
            });
        }
        if integer_ratio(self.horizon, self.control_period).is_none() {
            return Err(LfcError::InvalidParameter {
                name: "horizon",
                reason: format!(
                    "must be a multiple of control_period = {}",
                    self.control_period
                ),
            });
        }
        Ok(())
    }

    /// Integrator steps per control period.
    pub fn substeps(&self) -> usize {
        integer_ratio(self.control_period, self.dt).expect("validated timing")
    }

    /// Control steps per episode.
    pub fn control_steps(&self) -> usize {
        integer_ratio(self.horizon, self.control_period).expect("validated timing")
    }

    /// Integrator steps per episode.
    pub fn total_substeps(&self) -> usize {
        self.substeps() * self.control_steps()
    }
}

/// Anything that maps an observation to a generation command.
pub trait Controller {
    fn act(&mut self, obs: &Observation) -> f64;

    /// Called at the start of each episode.
    fn reset(&mut self) {}
}

/// Zero command.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenLoop;

impl Controller for OpenLoop {
    fn act(&mut self, _obs: &Observation) -> f64 {
        0.0
    }
}

/// One integrator-grid sample of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub delta_f: f64,
    pub delta_pm: f64,
    pub delta_pg: f64,
    /// Command held over `[t, t + dt)`.
    pub delta_pc: f64,
    /// Net disturbance at `t`.
    pub delta_pd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub state: PlantState,
}

#[derive(Debug, Clone)]
pub struct Environment {
    plant: Plant,
    timing: Timing,
    signal: Vec<f64>,
    state: PlantState,
    step: usize,
    filter: ObservationFilter,
    obs: Observation,
    diverged: bool,
}

impl Environment {
    pub fn new(plant: Plant, timing: Timing, disturbance: &Disturbance) -> Result<Self> {
        timing.validate()?;
        let signal = disturbance.sample(timing.dt, timing.total_substeps() + 1);
        Self::from_signal(plant, timing, signal)
    }

    /// Uses a pre-sampled ΔP_d on the integrator grid (`total_substeps + 1` values).
    pub fn from_signal(plant: Plant, timing: Timing, signal: Vec<f64>) -> Result<Self> {
        timing.validate()?;
        if signal.len() != timing.total_substeps() + 1 {
            return Err(LfcError::DimensionMismatch {
                expected: timing.total_substeps() + 1,
                got: signal.len(),
            });
        }
        let (filter, obs) = ObservationFilter::reset(timing.control_period, 0.0);
        Ok(Self {
            plant,
            timing,
            signal,
            state: PlantState::ZERO,
            step: 0,
            filter,
            obs,
            diverged: false,
        })
    }

    pub fn reset(&mut self) -> Observation {
        self.state = PlantState::ZERO;
        self.step = 0;
        self.diverged = false;
        let (filter, obs) = ObservationFilter::reset(self.timing.control_period, 0.0);
        self.filter = filter;
        self.obs = obs;
        obs
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn state(&self) -> PlantState {
        self.state
    }

    pub fn observation(&self) -> Observation {
        self.obs
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.timing.control_period
    }

    pub fn is_done(&self) -> bool {
        self.diverged || self.step >= self.timing.control_steps()
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// ΔP_d samples used during control step `k`.
    pub fn disturbance_window(&self, k: usize) -> &[f64] {
        let s = self.timing.substeps();
        &self.signal[k * s..(k + 1) * s]
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        self.advance(action, None)
    }

    /// Like [`Environment::step`], also appending one row per integrator step
    /// (state at the start of each substep).
    pub fn step_recorded(
        &mut self,
        action: f64,
        rows: &mut Vec<TrajectoryRow>,
    ) -> Result<StepResult> {
        self.advance(action, Some(rows))
    }

    fn advance(
        &mut self,
        action: f64,
        mut rows: Option<&mut Vec<TrajectoryRow>>,
    ) -> Result<StepResult> {
        if self.is_done() {
            return Err(LfcError::InvalidState("episode already finished".into()));
        }
        let s = self.timing.substeps();
        let base = self.step * s;
        let mut state = self.state;
        for i in 0..s {
            let p_d = self.signal[base + i];
            if let Some(rows) = rows.as_deref_mut() {
                rows.push(TrajectoryRow {
                    t: (base + i) as f64 * self.timing.dt,
                    delta_f: state.delta_f,
                    delta_pm: state.delta_pm,
                    delta_pg: state.delta_pg,
                    delta_pc: action,
                    delta_pd: p_d,
                });
            }
            match self.plant.step(state, action, p_d, self.timing.dt) {
                Ok(next) => state = next,
                Err(e) => {
                    self.diverged = true;
                    return Err(e);
                }
            }
        }
        self.state = state;
        self.step += 1;
        self.obs = self.filter.update(state.delta_f);
        Ok(StepResult {
            obs: self.obs,
            state,
        })
    }
}

/// Σ|Δf| over the control grid, or `None` if the episode diverges.
pub fn rollout_cost(env: &mut Environment, controller: &mut dyn Controller) -> Result<Option<f64>> {
    let mut obs = env.reset();
    controller.reset();
    let mut cost = 0.0;
    while !env.is_done() {
        let action = controller.act(&obs);
        match env.step(action) {
            Ok(r) => {
                cost += r.state.delta_f.abs();
                obs = r.obs;
            }
            Err(LfcError::Diverged { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{Nonlinearity, PlantParams};
    use crate::scenario::StepSchedule;

    #[test]
    fn timing_counts() {
        let t = Timing::default();
        assert_eq!(t.substeps(), 10);
        assert_eq!(t.control_steps(), 200);
        assert_eq!(t.total_substeps(), 2000);
        let bad = Timing {
            control_period: 0.015,
            ..t
        };
        assert!(bad.validate().is_err());
        let bad = Timing {
            horizon: 20.05,
            ..t
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_disturbance_stays_at_rest() {
        let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
        let mut env = Environment::new(plant, Timing::default(), &Disturbance::default()).unwrap();
        let cost = rollout_cost(&mut env, &mut OpenLoop).unwrap();
        assert_eq!(cost, Some(0.0));
    }

    #[test]
    fn recorded_rows_cover_the_integrator_grid() {
        let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
        let d = Disturbance::steps_only(StepSchedule::benchmark());
        let mut env = Environment::new(plant, Timing::default(), &d).unwrap();
        env.reset();
        let mut rows = Vec::new();
        for _ in 0..3 {
            env.step_recorded(0.01, &mut rows).unwrap();
        }
        assert_eq!(rows.len(), 30);
        assert!((rows[29].t - 0.29).abs() < 1e-12);
        assert!(rows.iter().all(|r| r.delta_pc == 0.01));
        assert!(env.step_index() == 3 && !env.is_done());
    }
}
