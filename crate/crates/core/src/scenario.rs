//! Exogenous disturbance ΔP_d(t) = ΔP_L(t) + ΔP_w(t): piecewise-constant load
//! steps plus an optional bounded stochastic wind injection treated as random load.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LfcError, Result};

/// Piecewise-constant load levels. Each `(time, level)` holds until the next event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepSchedule {
    events: Vec<(f64, f64)>,
}

impl StepSchedule {
    pub fn new(events: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(t, level)) in events.iter().enumerate() {
            if !t.is_finite() || !level.is_finite() {
                return Err(LfcError::InvalidParameter {
                    name: "events",
                    reason: format!("event {i} is not finite: ({t}, {level})"),
                });
            }
            if i > 0 && t <= events[i - 1].0 {
                return Err(LfcError::InvalidParameter {
                    name: "events",
                    reason: format!("event times must be strictly increasing (event {i} at {t})"),
                });
            }
        }
        Ok(Self { events })
    }

    /// −0.03 p.u. at 4 s, +0.03 p.u. at 12 s.
    pub fn benchmark() -> Self {
        Self {
            events: vec![(4.0, -0.03), (12.0, 0.03)],
        }
    }

    pub fn events(&self) -> &[(f64, f64)] {
        &self.events
    }

    /// Sum of absolute level changes, starting from zero.
    pub fn total_variation(&self) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for &(_, level) in &self.events {
            total += (level - prev).abs();
            prev = level;
        }
        total
    }
}

/// Load level at time `t`; zero before the first event.
pub fn step_profile(schedule: &StepSchedule, t: f64) -> f64 {
    schedule
        .events
        .iter()
        .take_while(|&&(time, _)| time <= t)
        .last()
        .map_or(0.0, |&(_, level)| level)
}

/// Reflected Ornstein–Uhlenbeck wind injection around `rated / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindModel {
    /// Rated output, p.u.; samples stay within `[0, rated]`.
    pub rated: f64,
    /// Mean-reversion time, s.
    pub correlation_time: f64,
    /// Diffusion coefficient, p.u./√s.
    pub volatility: f64,
    pub seed: u64,
}

impl Default for WindModel {
    fn default() -> Self {
        Self {
            rated: 0.02,
            correlation_time: 5.0,
            volatility: 0.004,
            seed: 0,
        }
    }
}

impl WindModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rated.is_finite() && self.rated > 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "rated",
                reason: format!("must be positive, got {}", self.rated),
            });
        }
        if !(self.correlation_time.is_finite() && self.correlation_time > 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "correlation_time",
                reason: format!("must be positive, got {}", self.correlation_time),
            });
        }
        if !(self.volatility.is_finite() && self.volatility >= 0.0) {
            return Err(LfcError::InvalidParameter {
                name: "volatility",
                reason: format!("must be >= 0, got {}", self.volatility),
            });
        }
        Ok(())
    }
}

/// Samples the wind process on an increasing time grid.
pub fn wind_profile(model: &WindModel, t_grid: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mean = 0.5 * model.rated;
    let mut x = mean;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut prev_t = t_grid.first().copied().unwrap_or(0.0);
    for &t in t_grid {
        let h = t - prev_t;
        if h > 0.0 {
            // Exact OU transition over h.
            let decay = (-h / model.correlation_time).exp();
            let spread =
                model.volatility * (0.5 * model.correlation_time * (1.0 - decay * decay)).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            x = mean + (x - mean) * decay + spread * z;
            x = reflect(x, model.rated);
        }
        out.push(x);
        prev_t = t;
    }
    out
}

fn reflect(mut x: f64, upper: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > upper {
            x = 2.0 * upper - x;
        } else {
            return x;
        }
    }
}

/// One to three step events at uniform times in `[0, horizon)` with uniform levels.
pub fn randomized_training_schedule(
    seed: u64,
    magnitude_range: (f64, f64),
    horizon: f64,
) -> Result<StepSchedule> {
    let (lo, hi) = magnitude_range;
    if !(lo <= hi && lo >= -0.05 && hi <= 0.05) {
        return Err(LfcError::InvalidParameter {
            name: "magnitude_range",
            reason: format!("must satisfy -0.05 <= lo <= hi <= 0.05, got [{lo}, {hi}]"),
        });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(LfcError::InvalidParameter {
            name: "horizon",
            reason: format!("must be positive, got {horizon}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..horizon)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let events = times
        .into_iter()
        .map(|t| {
            let level = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            (t, level)
        })
        .collect();
    StepSchedule::new(events)
}

/// Load steps plus optional wind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub steps: StepSchedule,
    pub wind: Option<WindModel>,
}

impl Disturbance {
    pub fn steps_only(steps: StepSchedule) -> Self {
        Self { steps, wind: None }
    }

    /// ΔP_d sampled at `t_i = i·dt` for `i in 0..n`.
    pub fn sample(&self, dt: f64, n: usize) -> Vec<f64> {
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let wind = self.wind.as_ref().map(|w| wind_profile(w, &grid));
        grid.iter()
            .enumerate()
            .map(|(i, &t)| {
                let load = step_profile(&self.steps, t);
                load + wind.as_ref().map_or(0.0, |w| w[i])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_schedule_lookup() {
        let s = StepSchedule::new(vec![(4.0, -0.03), (12.0, 0.03)]).unwrap();
        assert_eq!(step_profile(&s, 2.0), 0.0);
        assert_eq!(step_profile(&s, 5.0), -0.03);
        assert_eq!(step_profile(&s, 15.0), 0.03);
        // right-continuous
        assert_eq!(step_profile(&s, 4.0), -0.03);
        assert_eq!(step_profile(&s, 12.0), 0.03);
        assert!((s.total_variation() - 0.09).abs() < 1e-15);
        assert_eq!(s, StepSchedule::benchmark());
    }

    #[test]
    fn schedule_rejects_unordered_times() {
        assert!(StepSchedule::new(vec![(4.0, 0.1), (4.0, 0.2)]).is_err());
        assert!(StepSchedule::new(vec![(5.0, 0.1), (4.0, 0.2)]).is_err());
        assert!(StepSchedule::new(vec![(5.0, f64::NAN)]).is_err());
    }

    #[test]
    fn noiseless_wind_is_constant() {
        let model = WindModel {
            volatility: 0.0,
            ..WindModel::default()
        };
        let grid: Vec<f64> = (0..500).map(|i| i as f64 * 0.04).collect();
        assert!(wind_profile(&model, &grid).iter().all(|&w| w == 0.01));
    }

    #[test]
    fn wind_is_bounded_and_deterministic() {
        let grid: Vec<f64> = (0..2001).map(|i| i as f64 * 0.01).collect();
        for seed in 0..100 {
            let model = WindModel {
                seed,
                volatility: 0.02,
                ..WindModel::default()
            };
            let path = wind_profile(&model, &grid);
            assert!(
                path.iter().all(|&w| (0.0..=0.02).contains(&w)),
                "seed {seed}"
            );
            assert_eq!(path, wind_profile(&model, &grid));
        }
    }

    #[test]
    fn randomized_schedule_properties() {
        let zero = randomized_training_schedule(3, (0.0, 0.0), 20.0).unwrap();
        assert!(zero.events().iter().all(|&(_, l)| l == 0.0));
        assert_eq!(
            randomized_training_schedule(1, (-0.03, 0.03), 20.0).unwrap(),
            randomized_training_schedule(1, (-0.03, 0.03), 20.0).unwrap()
        );
        for seed in 0..1000 {
            let s = randomized_training_schedule(seed, (-0.02, 0.04), 20.0).unwrap();
            assert!((1..=3).contains(&s.events().len()));
            for &(t, l) in s.events() {
                assert!((0.0..20.0).contains(&t));
                assert!((-0.02..=0.04).contains(&l), "seed {seed}: {l}");
            }
        }
        assert!(randomized_training_schedule(0, (-0.1, 0.0), 20.0).is_err());
    }

    #[test]
    fn disturbance_adds_wind_to_load() {
        let d = Disturbance {
            steps: StepSchedule::benchmark(),
            wind: Some(WindModel {
                volatility: 0.0,
                ..WindModel::default()
            }),
        };
        let p = d.sample(0.01, 2001);
        assert_eq!(p[0], 0.01);
        assert!((p[500] - (-0.02)).abs() < 1e-15);
        assert!((p[2000] - 0.04).abs() < 1e-15);
    }
}
