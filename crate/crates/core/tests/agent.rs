use std::collections::BTreeMap;

use lfc_core::agent::{
    policy_gradient, pretrain_actor, train, transitions_from_records, EpisodeLog, TrainObserver,
    TrainScenario, DEFAULT_OBS_SCALES,
};
use lfc_core::emulator::q_value;
use lfc_core::pid::{generate_database, pid_control, DatabaseConfig};
use lfc_core::{
    Actor, Direction, Disturbance, Emulator, Mlp, Nonlinearity, Observation, OptimizerState,
    OuConfig, OuNoise, PidGains, Plant, PlantParams, PlantState, PretrainConfig, ReplayBuffer,
    StepSchedule, Timing, TrainConfig, Transition, ZooConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAINS: PidGains = PidGains {
    kp: 0.1,
    ki: 1.1,
    kd: 0.25,
};

fn small_actor(seed: u64) -> Actor {
    Actor::init(&[16, 16], 0.1, DEFAULT_OBS_SCALES, seed).unwrap()
}

fn small_emulator(seed: u64) -> Emulator {
    Emulator::new(
        Mlp::init(&[4, 16, 16, 1], seed).unwrap(),
        [0.05, 0.05, 0.5, 0.03],
    )
    .unwrap()
}

fn random_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let obs = Observation::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.5..0.5),
            );
            Transition {
                obs,
                action: rng.random_range(-0.05..0.05),
                next_obs: obs,
                reward: 0.0,
            }
        })
        .collect()
}

#[test]
fn ou_stationary_mean_is_zero() {
    let mut n = OuNoise::new(
        OuConfig {
            decay: 1.0,
            ..OuConfig::default()
        },
        17,
    )
    .unwrap();
    let steps = 1_000_000;
    let dt = 0.1;
    let xs: Vec<f64> = (0..steps).map(|_| n.step(dt)).collect();
    let mean = xs.iter().sum::<f64>() / steps as f64;
    // AR(1) with coefficient ρ: the variance of the mean is inflated by (1+ρ)/(1−ρ).
    let rho = 1.0 - 0.15 * dt;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / steps as f64;
    let se = (var / steps as f64 * (1.0 + rho) / (1.0 - rho)).sqrt();
    assert!(mean.abs() <= 3.0 * se, "mean {mean:e}, se {se:e}");
}

#[test]
fn minibatch_sampling_is_uniform() {
    let mut b = ReplayBuffer::new(20).unwrap();
    for t in random_transitions(20, 1) {
        b.push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 100_000;
    let mut counts = [0usize; 20];
    for _ in 0..draws / 10 {
        for i in b.sample_indices(10, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let p = 1.0 / 20.0;
    let expect = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!(
            (*c as f64 - expect).abs() <= 3.0 * sigma + 1.0,
            "slot {i}: {c}"
        );
    }
}

#[test]
fn action_blind_emulator_gives_zero_policy_gradient() {
    let mut net = Mlp::init(&[4, 8, 1], 3).unwrap();
    for j in 0..8 {
        net.weights_mut(0)[j * 4 + 3] = 0.0;
    }
    let em = Emulator::new(net, [0.05, 0.05, 0.5, 0.03]).unwrap();
    let actor = small_actor(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = policy_gradient(
        &actor,
        &em,
        &random_transitions(16, 2),
        &ZooConfig::default(),
        &mut rng,
    )
    .unwrap();
    assert!(g.values().all(|v| *v == 0.0));
}

#[test]
fn identical_transitions_average_to_the_single_gradient() {
    let actor = small_actor(2);
    let em = small_emulator(3);
    let t = random_transitions(1, 5)[0];
    let zoo = ZooConfig {
        n_samples: 4096,
        ..ZooConfig::default()
    };
    let single =
        policy_gradient(&actor, &em, &[t], &zoo, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let batch = vec![t; 8];
    let exact_a = em.action_gradient(&t.obs, actor.policy(&t.obs)).unwrap();
    let many =
        policy_gradient(&actor, &em, &batch, &zoo, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    // Each row has its own draws, so agreement is up to estimator noise.
    let scale = single.norm();
    let mut diff = many.clone();
    let mut neg = single.clone();
    neg.scale(-1.0);
    diff.add_assign(&neg);
    assert!(diff.norm() <= 0.01 * scale, "{} vs {scale}", diff.norm());
    assert!(exact_a.is_finite());
}

#[test]
fn ascent_step_does_not_lower_the_estimated_q() {
    let em = small_emulator(12);
    let zoo = ZooConfig {
        n_samples: 256,
        ..ZooConfig::default()
    };
    let eta = 5e-4;
    for b in 0..20 {
        let actor = small_actor(100 + b);
        let batch = random_transitions(32, 200 + b);
        let q = |a: &Actor| -> f64 {
            batch
                .iter()
                .map(|t| q_value(em.predict(&t.obs, a.act(&t.obs, 0.0)).unwrap()))
                .sum::<f64>()
                / batch.len() as f64
        };
        let g =
            policy_gradient(&actor, &em, &batch, &zoo, &mut ChaCha8Rng::seed_from_u64(b)).unwrap();
        let mut stepped = actor.clone();
        let mut opt = OptimizerState::sgd(eta).unwrap();
        stepped
            .apply_update(&mut opt, &g, Direction::Ascent)
            .unwrap();
        assert!(q(&stepped) >= q(&actor) - 1e-15, "batch {b}");
    }
}

#[test]
fn cloned_actor_tracks_the_pid() {
    let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
    let cfg = DatabaseConfig {
        n_episodes: 10,
        noise_std: 0.0,
        ..DatabaseConfig::default()
    };
    let db = generate_database(plant, Timing::default(), GAINS, 0.1, &cfg).unwrap();
    let pcfg = PretrainConfig {
        hidden: vec![32, 32],
        epochs: 60,
        ..PretrainConfig::default()
    };
    let a = pretrain_actor(&db.records, &pcfg).unwrap();
    let b = pretrain_actor(&db.records, &pcfg).unwrap();
    assert_eq!(a.actor, b.actor);
    let mse = a
        .validation
        .iter()
        .map(|&i| {
            let o = db.records[i].obs;
            (a.actor.act(&o, 0.0) - pid_control(&o, &GAINS, 0.1)).powi(2)
        })
        .sum::<f64>()
        / a.validation.len() as f64;
    assert!((mse - a.validation_mse).abs() < 1e-15);
    assert!(mse < 1e-4, "mse {mse:e}");
}

#[derive(Default)]
struct Recorder {
    steps: Vec<(usize, usize, PlantState, Transition)>,
    episodes: Vec<EpisodeLog>,
}

impl TrainObserver for Recorder {
    fn on_transition(&mut self, episode: usize, step: usize, state: &PlantState, t: &Transition) {
        self.steps.push((episode, step, *state, *t));
    }

    fn on_episode(&mut self, log: &EpisodeLog, _actor: &Actor) -> lfc_core::Result<()> {
        self.episodes.push(*log);
        Ok(())
    }
}

fn short_training(
    noise: OuConfig,
    scenario: &TrainScenario,
    rec: &mut Recorder,
) -> (Actor, Vec<EpisodeLog>) {
    let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
    let timing = Timing {
        horizon: 5.0,
        ..Timing::default()
    };
    let db = generate_database(
        plant,
        timing,
        GAINS,
        0.1,
        &DatabaseConfig {
            n_episodes: 2,
            ..DatabaseConfig::default()
        },
    )
    .unwrap();
    let prefill = transitions_from_records(&db.records, timing.control_period);
    let cfg = TrainConfig {
        episodes: 3,
        minibatch: 16,
        updates_per_step: 2,
        noise,
        ..TrainConfig::default()
    };
    let out = train(
        plant,
        timing,
        scenario,
        &cfg,
        small_actor(9),
        &small_emulator(10),
        &prefill,
        rec,
    )
    .unwrap();
    assert_eq!(out.total_updates, 3 * 50 * 2);
    (out.actor, out.log)
}

#[test]
fn training_bookkeeping() {
    let scenario = TrainScenario::Fixed(Disturbance::steps_only(
        StepSchedule::new(vec![(1.0, 0.02)]).unwrap(),
    ));
    let mut rec = Recorder::default();
    let (_, log) = short_training(OuConfig::default(), &scenario, &mut rec);
    assert_eq!(rec.episodes, log);
    let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
    let timing = Timing {
        horizon: 5.0,
        ..Timing::default()
    };
    let signal = Disturbance::steps_only(StepSchedule::new(vec![(1.0, 0.02)]).unwrap())
        .sample(timing.dt, timing.total_substeps() + 1);
    for e in &log {
        assert_eq!(e.updates, 50 * 2);
        // logged R equals −Σ|Δf| over the stored transitions
        let r: f64 = -rec
            .steps
            .iter()
            .filter(|s| s.0 == e.episode)
            .map(|s| s.3.next_obs.f_dev.abs())
            .sum::<f64>();
        assert!((r - e.reward).abs() <= 1e-12, "{r} vs {}", e.reward);
    }
    for (_, k, state, t) in &rec.steps {
        let mut s = *state;
        for i in 0..timing.substeps() {
            s = plant
                .step(s, t.action, signal[k * timing.substeps() + i], timing.dt)
                .unwrap();
        }
        assert_eq!(s.delta_f, t.next_obs.f_dev);
        assert_eq!(t.reward, q_value(t.next_obs.f_dev));
        assert!(t.is_finite());
    }
}

#[test]
fn noiseless_training_is_deterministic() {
    let quiet = OuConfig {
        sigma: 0.0,
        decay: 1.0,
        ..OuConfig::default()
    };
    let scenario = TrainScenario::Fixed(Disturbance::steps_only(StepSchedule::benchmark()));
    let (a, la) = short_training(quiet, &scenario, &mut Recorder::default());
    let (b, lb) = short_training(quiet, &scenario, &mut Recorder::default());
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let random = TrainScenario::Randomized {
        level_min: -0.02,
        level_max: 0.02,
        wind: None,
        seed: 3,
    };
    let (c, _) = short_training(OuConfig::default(), &random, &mut Recorder::default());
    let (d, _) = short_training(OuConfig::default(), &random, &mut Recorder::default());
    assert_eq!(c, d);
}

#[test]
fn zero_disturbance_training_stays_quiet() {
    let quiet = OuConfig {
        sigma: 0.0,
        decay: 1.0,
        ..OuConfig::default()
    };
    // A zero-output actor starts exactly at the equilibrium.
    let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
    let timing = Timing {
        horizon: 5.0,
        ..Timing::default()
    };
    let actor = Actor::new(Mlp::zeros(&[3, 8, 1]).unwrap(), 0.1, DEFAULT_OBS_SCALES).unwrap();
    let prefill = random_transitions(64, 4);
    let cfg = TrainConfig {
        episodes: 2,
        minibatch: 16,
        noise: quiet,
        ..TrainConfig::default()
    };
    let out = train(
        plant,
        timing,
        &TrainScenario::Fixed(Disturbance::default()),
        &cfg,
        actor,
        &small_emulator(1),
        &prefill,
        &mut (),
    )
    .unwrap();
    for e in &out.log {
        assert!(e.reward.abs() < 1e-9, "{}", e.reward);
    }
}

#[test]
fn checkpoints_carry_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.txt");
    let mut meta = BTreeMap::new();
    meta.insert("episode".to_string(), "25".to_string());
    small_actor(1).save(&p, &meta).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("mlp v1 3,16,16,1 tanh\n"));
    assert!(text.contains("# episode = 25\n"));
    assert_eq!(Actor::load(&p).unwrap(), small_actor(1));
}
