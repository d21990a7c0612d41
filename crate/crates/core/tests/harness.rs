mod common;

use common::*;
use lfc_core::harness::{compare, compute_metrics, exit_code, run_episode, simulate, Trajectory};
use lfc_core::plant::steady_state_freq;
use lfc_core::{
    Controller, Disturbance, Environment, LfcError, Metrics, Nonlinearity, OpenLoop, PidController,
    PidGains, Plant, PlantParams, RunConfig, StepSchedule, Timing,
};
use proptest::prelude::*;

fn tuned() -> PidController {
    PidController {
        gains: PidGains::new(0.1, 1.1, 0.25),
        a_max: 0.1,
    }
}

fn stable_config() -> RunConfig {
    let p = stable_params();
    let overrides = vec![
        format!("plant.r_droop = {}", p.r_droop),
        "nonlinearity.gdb_kappa = 0.0".to_string(),
        "nonlinearity.grc_sigma = inf".to_string(),
        "scenario.steps = [[0.0, 0.03]]".to_string(),
        "sim.horizon = 60.0".to_string(),
    ];
    RunConfig::from_toml("", "test", &overrides).unwrap()
}

#[test]
fn metric_examples() {
    let m = Metrics::from_deltas(&[0.01, -0.02, 0.03]);
    assert!((m.reward + 0.06).abs() < 1e-15);
    assert!((m.mean_abs_f - 0.02).abs() < 1e-15);
    assert_eq!(m.largest_var, 0.03);
    assert!((m.q_sum + 0.0014).abs() < 1e-15);
    assert_eq!(Metrics::from_deltas(&[0.0; 5]), Metrics::default());
}

#[test]
fn open_loop_episode_settles_on_a_stable_plant() {
    let cfg = stable_config();
    let traj = run_episode(&cfg, &mut OpenLoop).unwrap();
    assert!(!traj.diverged);
    assert_eq!(traj.rows.len(), 6001);
    let last = traj.rows.last().unwrap();
    assert!((last.t - 60.0).abs() < 1e-9);
    let expected = steady_state_freq(0.03, &stable_params());
    assert!((last.delta_f - expected).abs() < 1e-4);
}

#[test]
fn open_loop_table_i_episode_reports_divergence() {
    let cfg = RunConfig::from_toml(
        "",
        "test",
        &[
            "nonlinearity.grc_sigma = inf".into(),
            "nonlinearity.gdb_kappa = 0.0".into(),
        ],
    )
    .unwrap();
    let traj = run_episode(&cfg, &mut OpenLoop).unwrap();
    assert!(traj.diverged);
    assert!(traj.rows.len() < 2001);
    assert!(!traj.rows.is_empty());
}

#[test]
fn zero_disturbance_gives_a_flat_trajectory() {
    let cfg = RunConfig::from_toml("", "test", &["scenario.steps = []".into()]).unwrap();
    let traj = run_episode(&cfg, &mut tuned()).unwrap();
    assert!(traj.rows.iter().all(|r| r.delta_f.abs() <= 1e-9));
}

#[test]
fn trajectories_are_bit_identical_and_round_trip() {
    let cfg = RunConfig::from_toml("", "test", &["scenario.wind = true".into()]).unwrap();
    let a = run_episode(&cfg, &mut tuned()).unwrap();
    let b = run_episode(&cfg, &mut tuned()).unwrap();
    let csv = a.to_csv();
    assert_eq!(csv, b.to_csv());
    let back = Trajectory::from_csv(&csv, "mem", a.substeps).unwrap();
    assert_eq!(back.rows, a.rows);
    assert_eq!(compute_metrics(&back), compute_metrics(&a));
    // 17 significant digits per field
    let first = csv.lines().nth(1).unwrap();
    assert!(first
        .split(',')
        .all(|f| f.split('e').next().unwrap().trim_start_matches('-').len() == 18));
}

#[test]
fn trajectory_csv_errors_name_the_field() {
    let bad = "t,delta_f,delta_pm,delta_pg,delta_pc,delta_pd\n0,0,0,x,0,0\n";
    let e = Trajectory::from_csv(bad, "traj.csv", 10)
        .unwrap_err()
        .to_string();
    assert!(
        e.contains("traj.csv") && e.contains("delta_pg") && e.contains("line 2"),
        "{e}"
    );
    assert!(Trajectory::from_csv("a,b\n", "traj.csv", 10).is_err());
}

fn benchmark_env(nl: Nonlinearity) -> Environment {
    let plant = Plant::new(PlantParams::default(), nl).unwrap();
    let d = Disturbance::steps_only(StepSchedule::benchmark());
    Environment::new(plant, Timing::default(), &d).unwrap()
}

#[test]
fn same_controller_twice_gives_identical_rows() {
    let env = benchmark_env(Nonlinearity::benchmark());
    let mut cs: Vec<(String, Box<dyn Controller>)> = vec![
        ("a".into(), Box::new(tuned())),
        ("b".into(), Box::new(tuned())),
    ];
    let c = compare(&env, &mut cs).unwrap();
    assert_eq!(c.rows["a"], c.rows["b"]);
    assert_eq!(c.trajectories["a"], c.trajectories["b"]);
}

#[test]
fn controllers_see_identical_disturbances() {
    let plant = Plant::new(PlantParams::default(), Nonlinearity::benchmark()).unwrap();
    let d = Disturbance {
        wind: Some(Default::default()),
        ..Disturbance::steps_only(StepSchedule::benchmark())
    };
    let env = Environment::new(plant, Timing::default(), &d).unwrap();
    let mut cs: Vec<(String, Box<dyn Controller>)> = vec![
        ("open_loop".into(), Box::new(OpenLoop)),
        ("pid".into(), Box::new(tuned())),
    ];
    let c = compare(&env, &mut cs).unwrap();
    let a = &c.trajectories["open_loop"].rows;
    let b = &c.trajectories["pid"].rows;
    let n = a.len().min(b.len());
    assert!(n > 100);
    assert!((0..n).all(|i| a[i].delta_pd.to_bits() == b[i].delta_pd.to_bits()));
}

#[test]
fn open_loop_row_is_worse_than_stabilising_rows() {
    let env = benchmark_env(Nonlinearity::linear());
    let mut cs: Vec<(String, Box<dyn Controller>)> = vec![
        ("open_loop".into(), Box::new(OpenLoop)),
        ("pid".into(), Box::new(tuned())),
        (
            "pid_soft".into(),
            Box::new(PidController {
                gains: PidGains::new(0.2, 1.0, 0.3),
                a_max: 0.1,
            }),
        ),
    ];
    let c = compare(&env, &mut cs).unwrap();
    let open = c.rows["open_loop"];
    for name in ["pid", "pid_soft"] {
        let r = c.rows[name];
        assert!(!r.diverged);
        assert!(
            open.diverged || open.metrics.mean_abs_f > r.metrics.mean_abs_f,
            "{name}"
        );
    }
    let json: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
    assert_eq!(json.as_object().unwrap().len(), 3);
    for k in ["q_sum", "mean_abs_f", "largest_var", "reward"] {
        assert!(json["pid"][k].is_number(), "{k}");
    }
}

#[test]
fn compare_needs_two_controllers() {
    let env = benchmark_env(Nonlinearity::linear());
    let mut cs: Vec<(String, Box<dyn Controller>)> = vec![("pid".into(), Box::new(tuned()))];
    assert!(matches!(
        compare(&env, &mut cs),
        Err(LfcError::InvalidParameter { .. })
    ));
}

#[test]
fn simulate_resets_the_controller() {
    let mut env = benchmark_env(Nonlinearity::benchmark());
    let mut pid = tuned();
    let a = simulate(&mut env, &mut pid).unwrap();
    let b = simulate(&mut env, &mut pid).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exit_codes() {
    assert_eq!(
        exit_code(&LfcError::Config {
            key: "plant.t_g".into(),
            reason: "bad".into()
        }),
        2
    );
    assert_eq!(exit_code(&LfcError::MissingFile("x".into())), 2);
    assert_eq!(
        exit_code(&LfcError::Diverged {
            delta_f: 3.0,
            f_max: 2.0
        }),
        3
    );
}

proptest! {
    #[test]
    fn metric_invariants(d in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
        let m = Metrics::from_deltas(&d);
        prop_assert!(m.q_sum <= 0.0);
        prop_assert!(m.largest_var >= m.mean_abs_f && m.mean_abs_f >= 0.0);
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        prop_assert_eq!(Metrics::from_deltas(&neg), m);
    }
}
