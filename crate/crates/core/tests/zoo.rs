use lfc_core::emulator::{draw_directions, q_value, zoo_estimate, Sampling};
use lfc_core::{Emulator, Mlp, Observation, ZooConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_estimate(c: f64, k: usize, sampling: Sampling, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = draw_directions(k, sampling, &mut rng);
    zoo_estimate(|a| c * a, 0.02, 1e-4, &u)
}

#[test]
fn linear_map_estimate_equals_c_times_mean_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = draw_directions(37, Sampling::Gaussian, &mut rng);
    let m2 = u.iter().map(|v| v * v).sum::<f64>() / 37.0;
    let g = zoo_estimate(|a| -3.5 * a, 0.01, 1e-4, &u);
    assert!((g - (-3.5 * m2)).abs() < 1e-9);
}

#[test]
fn linear_map_converges_to_c_with_many_samples() {
    for (c, seed) in [(2.0, 1), (-0.7, 2), (15.0, 3)] {
        for sampling in [Sampling::Gaussian, Sampling::Stratified] {
            let g = linear_estimate(c, 10_000, sampling, seed);
            assert!((g - c).abs() <= 0.05 * c.abs(), "{sampling:?}: {g} vs {c}");
        }
    }
}

#[test]
fn estimator_spread_shrinks_as_one_over_root_k() {
    let spread = |k: usize| {
        let est: Vec<f64> = (0..2000)
            .map(|s| linear_estimate(1.0, k, Sampling::Gaussian, 10_000 + s))
            .collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
    };
    for k in [8, 25, 100] {
        let ratio = spread(k) / spread(4 * k);
        assert!(
            (ratio - 2.0).abs() <= 0.3 * 2.0,
            "K = {k}: std ratio {ratio}"
        );
    }
}

#[test]
fn estimates_are_deterministic_per_seed() {
    let em = Emulator::new(Mlp::init(&[4, 16, 1], 2).unwrap(), [0.05, 0.05, 0.5, 0.03]).unwrap();
    let obs = Observation::new(0.01, -0.02, 0.1);
    let zoo = ZooConfig::default();
    assert_eq!(
        em.zoo_grad(&obs, 0.01, &zoo).unwrap(),
        em.zoo_grad(&obs, 0.01, &zoo).unwrap()
    );
}

#[test]
fn batched_estimates_match_single_calls() {
    let em = Emulator::new(
        Mlp::init(&[4, 16, 16, 1], 4).unwrap(),
        [0.05, 0.05, 0.5, 0.03],
    )
    .unwrap();
    let pairs = vec![
        (Observation::new(0.01, 0.02, -0.1), 0.01),
        (Observation::new(-0.03, 0.0, 0.2), -0.02),
    ];
    let zoo = ZooConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batched = em.predict_and_zoo_batch(&pairs, &zoo, &mut rng).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for ((obs, a), (p, g)) in pairs.iter().zip(batched) {
        let single = em
            .zoo_grad_with(obs, *a, zoo.epsilon, zoo.n_samples, zoo.sampling, &mut rng)
            .unwrap();
        assert!((single - g).abs() < 1e-9);
        assert_eq!(p, em.predict(obs, *a).unwrap());
    }
}

#[test]
fn zoo_agrees_with_backprop_on_a_random_emulator() {
    let em = Emulator::new(
        Mlp::init(&[4, 32, 32, 1], 8).unwrap(),
        [0.05, 0.05, 0.5, 0.03],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zoo = ZooConfig {
        n_samples: 100,
        ..ZooConfig::default()
    };
    let mut total = 0.0;
    for _ in 0..100 {
        let obs = Observation::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-1.0..1.0),
        );
        let a = rng.random_range(-0.05..0.05);
        let exact = em.action_gradient(&obs, a).unwrap();
        let z = em
            .zoo_grad_with(&obs, a, zoo.epsilon, zoo.n_samples, zoo.sampling, &mut rng)
            .unwrap();
        total += ((z - exact) / exact).abs();
    }
    assert!(
        total / 100.0 < 0.05,
        "mean relative error {}",
        total / 100.0
    );
}

#[test]
fn dq_da_matches_finite_differences_of_squared_prediction() {
    let em = Emulator::new(
        Mlp::init(&[4, 32, 32, 1], 21).unwrap(),
        [0.05, 0.05, 0.5, 0.03],
    )
    .unwrap();
    let zoo = ZooConfig {
        n_samples: 100,
        ..ZooConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for _ in 0..200 {
        let obs = Observation::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-1.0..1.0),
        );
        let a = rng.random_range(-0.05..0.05);
        let p = em.predict(&obs, a).unwrap();
        if p.abs() < 1e-5 {
            continue;
        }
        let h = 1e-6;
        let sq = |a: f64| em.predict(&obs, a).unwrap().powi(2);
        let fd = -(sq(a + h) - sq(a - h)) / (2.0 * h);
        let dq = em.dq_da(&obs, a, &zoo).unwrap();
        assert!((dq - fd).abs() <= 0.1 * fd.abs(), "{dq} vs {fd}");
        checked += 1;
    }
    assert!(checked > 150);
}

proptest! {
    #[test]
    fn quadratics_are_exact_per_sample(c2 in -5.0f64..5.0, c1 in -5.0f64..5.0, c0 in -1.0f64..1.0,
                                       a in -0.1f64..0.1, u in -3.0f64..3.0) {
        let g = zoo_estimate(|x| c2 * x * x + c1 * x + c0, a, 1e-4, &[u]);
        let exact = (2.0 * c2 * a + c1) * u * u;
        prop_assert!((g - exact).abs() <= 1e-7 * (1.0 + exact.abs()));
    }

    #[test]
    fn q_value_is_non_positive(df in -10.0f64..10.0) {
        let q = q_value(df);
        prop_assert!(q <= 0.0);
        prop_assert_eq!(q == 0.0, df == 0.0);
    }
}
