//! Model-free load frequency control for a nonlinear single-area power system.
//!
//! The crate simulates the plant (governor dead band and generation rate
//! constraint included), tunes a PID baseline and logs an LFC database with it,
//! trains an emulator network `φ(s, a) → Δf_{t+1}`, and optimises an actor
//! network with a DDPG-style loop whose action gradient comes from zeroth-order
//! estimates on the emulator instead of a critic.

pub mod agent;
pub mod emulator;
pub mod env;
pub mod error;
mod fit;
pub mod harness;
pub mod neural;
pub mod pid;
pub mod plant;
pub mod scenario;

pub use agent::{Actor, OuConfig, OuNoise, PretrainConfig, ReplayBuffer, TrainConfig, Transition};
pub use emulator::{Emulator, EmulatorConfig, EpochLoss, Sampling, ZooConfig};
pub use env::{Controller, Environment, OpenLoop, Timing, TrajectoryRow};
pub use error::{LfcError, Result};
pub use harness::{Metrics, RunConfig, Trajectory};
pub use neural::{Direction, Gradients, Mlp, OptimizerState};
pub use pid::{DbRecord, LfcDatabase, PidController, PidGains, TuneGrid};
pub use plant::{Nonlinearity, Observation, Plant, PlantParams, PlantState};
pub use scenario::{Disturbance, StepSchedule, WindModel};
