//! Single-area load frequency control plant.
//!
//! The generation unit is a governor, a non-reheat turbine and the swing
//! equation of the area:
//!
//! ```text
//! dΔf/dt   = (ΔP_m − ΔP_d)/(2H) − D·Δf/(2H)
//! dΔP_m/dt = clamp((ΔP_g − ΔP_m)/T_t, −σ, σ)          (generation rate constraint)
//! dΔP_g/dt = (deadzone(ΔP_c, κ) − Δf/R − ΔP_g)/T_g     (governor dead band)
//! ```
//!
//! Integration is classical fixed-step RK4, with the rate clamp applied inside
//! every stage evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{LfcError, Result};

/// Default safety bound on |Δf|, Hz.
pub const DEFAULT_F_MAX: f64 = 2.0;

/// Physical parameters of the generation unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Governor time constant, s.
    pub t_g: f64,
    /// Turbine time constant, s.
    pub t_t: f64,
    /// Inertia constant, p.u./Hz.
    pub h: f64,
    /// Damping coefficient, p.u./Hz.
    pub d: f64,
    /// Speed droop, Hz/p.u.
    pub r_droop: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            t_g: 0.10,
            t_t: 0.40,
            h: 0.0833,
            d: 0.0015,
            r_droop: 0.33,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_g", self.t_g),
            ("t_t", self.t_t),
            ("h", self.h),
            ("d", self.d),
            ("r_droop", self.r_droop),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(LfcError::InvalidParameter {
                    name,
                    reason: format!("must be finite and strictly positive, got {value}"),
                });
            }
        }
        Ok(())
    }
}

/// Governor dead band and generation rate constraint settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    /// Dead-band half-width on the governor command, p.u. Zero disables it.
    pub gdb_kappa: f64,
    /// Limit on |dΔP_m/dt|, p.u./s. Infinity disables it.
    pub grc_sigma: f64,
}

impl Nonlinearity {
    pub const fn linear() -> Self {
        Self {
            gdb_kappa: 0.0,
            grc_sigma: f64::INFINITY,
        }
    }

    /// 0.06 % dead band and 0.0017 p.u./s rate limit.
    pub const fn benchmark() -> Self {
        Self {
            gdb_kappa: 0.0006,
            grc_sigma: 0.0017,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.gdb_kappa == 0.0 && self.grc_sigma == f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gdb_kappa.is_finite() && self.gdb_kappa >= 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "gdb_kappa",
                reason: format!("must be finite and >= 0, got {}", self.gdb_kappa),
            });
        }
        if self.grc_sigma.is_nan() || self.grc_sigma <= 0.0 {
            return Err(LfcError::InvalidParameter {
                name: "grc_sigma",
                reason: format!("must be > 0 (infinity disables), got {}", self.grc_sigma),
            });
        }
        Ok(())
    }
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Self::linear()
    }
}

/// Continuous state of the generation unit. Also used for its time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Frequency deviation, Hz.
    pub delta_f: f64,
    /// Mechanical output deviation, p.u.
    pub delta_pm: f64,
    /// Valve position deviation, p.u.
    pub delta_pg: f64,
}

impl PlantState {
    pub const ZERO: PlantState = PlantState {
        delta_f: 0.0,
        delta_pm: 0.0,
        delta_pg: 0.0,
    };

    pub fn new(delta_f: f64, delta_pm: f64, delta_pg: f64) -> Self {
        Self {
            delta_f,
            delta_pm,
            delta_pg,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.delta_f.is_finite() && self.delta_pm.is_finite() && self.delta_pg.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.delta_f, self.delta_pm, self.delta_pg]
    }

    /// `self + k·rate`
    fn add_scaled(self, rate: PlantState, k: f64) -> PlantState {
        PlantState {
            delta_f: self.delta_f + k * rate.delta_f,
            delta_pm: self.delta_pm + k * rate.delta_pm,
            delta_pg: self.delta_pg + k * rate.delta_pg,
        }
    }
}

/// Controller input: proportional, integral and derivative of Δf.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    /// Δf, Hz.
    pub f_dev: f64,
    /// Running integral of Δf since the episode start, Hz·s.
    pub f_int: f64,
    /// Backward-difference derivative of Δf, Hz/s.
    pub f_der: f64,
}

impl Observation {
    pub const ZERO: Observation = Observation {
        f_dev: 0.0,
        f_int: 0.0,
        f_der: 0.0,
    };

    pub fn new(f_dev: f64, f_int: f64, f_der: f64) -> Self {
        Self {
            f_dev,
            f_int,
            f_der,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.f_dev, self.f_int, self.f_der]
    }

    pub fn is_finite(&self) -> bool {
        self.f_dev.is_finite() && self.f_int.is_finite() && self.f_der.is_finite()
    }
}

/// Governor dead zone: `max(0, u − κ) + min(0, u + κ)`.
pub fn dead_zone(u: f64, kappa: f64) -> f64 {
    (u - kappa).max(0.0) + (u + kappa).min(0.0)
}

/// Generation rate constraint: `clamp(raw_rate, −σ, σ)`.
pub fn rate_limit(raw_rate: f64, sigma: f64) -> f64 {
    raw_rate.clamp(-sigma, sigma)
}

/// Linear steady-state frequency deviation under a constant net disturbance.
pub fn steady_state_freq(p_d: f64, params: &PlantParams) -> f64 {
    -p_d / (params.d + 1.0 / params.r_droop)
}

/// One rectangle-rule integral and backward-difference derivative update.
pub fn observe(delta_f: f64, f_int_prev: f64, delta_f_prev: f64, dt: f64) -> Observation {
    Observation {
        f_dev: delta_f,
        f_int: f_int_prev + delta_f * dt,
        f_der: (delta_f - delta_f_prev) / dt,
    }
}

/// Tracks the integral and previous sample needed by [`observe`] over an episode.
#[derive(Debug, Clone, Copy)]
pub struct ObservationFilter {
    dt: f64,
    f_int: f64,
    prev: f64,
}

impl ObservationFilter {
    /// Starts a new episode; the returned observation has zero integral and derivative.
    pub fn reset(dt: f64, delta_f0: f64) -> (Self, Observation) {
        let filter = Self {
            dt,
            f_int: 0.0,
            prev: delta_f0,
        };
        (filter, Observation::new(delta_f0, 0.0, 0.0))
    }

    pub fn update(&mut self, delta_f: f64) -> Observation {
        let obs = observe(delta_f, self.f_int, self.prev, self.dt);
        self.f_int = obs.f_int;
        self.prev = delta_f;
        obs
    }
}

/// The plant model with its nonlinearities and divergence guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub params: PlantParams,
    pub nonlinearity: Nonlinearity,
    /// Episodes abort once |Δf| exceeds this bound, Hz.
    pub f_max: f64,
}

impl Plant {
    pub fn new(params: PlantParams, nonlinearity: Nonlinearity) -> Result<Self> {
        params.validate()?;
        nonlinearity.validate()?;
        Ok(Self {
            params,
            nonlinearity,
            f_max: DEFAULT_F_MAX,
        })
    }

    pub fn with_f_max(mut self, f_max: f64) -> Self {
        self.f_max = f_max;
        self
    }

    /// Time derivative of the state under command `u_c` and net disturbance `p_d`.
    pub fn derivatives(&self, state: PlantState, u_c: f64, p_d: f64) -> Result<PlantState> {
        if !state.is_finite() || !u_c.is_finite() || !p_d.is_finite() {
            return Err(LfcError::InvalidState(format!(
                "non-finite input: state={state:?}, u_c={u_c}, p_d={p_d}"
            )));
        }
        let p = &self.params;
        let nl = &self.nonlinearity;
        let two_h = 2.0 * p.h;
        let valve_cmd = dead_zone(u_c, nl.gdb_kappa);
        Ok(PlantState {
            delta_f: (state.delta_pm - p_d) / two_h - p.d * state.delta_f / two_h,
            delta_pm: rate_limit((state.delta_pg - state.delta_pm) / p.t_t, nl.grc_sigma),
            delta_pg: (valve_cmd - state.delta_f / p.r_droop - state.delta_pg) / p.t_g,
        })
    }

    /// One RK4 step of length `dt` with `u_c` and `p_d` held constant.
    pub fn step(&self, state: PlantState, u_c: f64, p_d: f64, dt: f64) -> Result<PlantState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LfcError::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            });
        }
        let k1 = self.derivatives(state, u_c, p_d)?;
        let k2 = self.derivatives(state.add_scaled(k1, 0.5 * dt), u_c, p_d)?;
        let k3 = self.derivatives(state.add_scaled(k2, 0.5 * dt), u_c, p_d)?;
        let k4 = self.derivatives(state.add_scaled(k3, dt), u_c, p_d)?;
        let next = PlantState {
            delta_f: state.delta_f
                + dt / 6.0 * (k1.delta_f + 2.0 * k2.delta_f + 2.0 * k3.delta_f + k4.delta_f),
            delta_pm: state.delta_pm
                + dt / 6.0 * (k1.delta_pm + 2.0 * k2.delta_pm + 2.0 * k3.delta_pm + k4.delta_pm),
            delta_pg: state.delta_pg
                + dt / 6.0 * (k1.delta_pg + 2.0 * k2.delta_pg + 2.0 * k3.delta_pg + k4.delta_pg),
        };
        if !next.is_finite() || next.delta_f.abs() > self.f_max {
            return Err(LfcError::Diverged {
                delta_f: next.delta_f.abs(),
                f_max: self.f_max,
            });
        }
        Ok(next)
    }
}
