use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfc_core::harness::{exit_code, pipeline, RunConfig};
use lfc_core::LfcError;

#[derive(Parser)]
#[command(
    name = "lfc",
    version,
    about = "Model-free load frequency control laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config key, e.g. `--set train.episodes=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search PID gains on the linear plant.
    TunePid(Common),
    /// Log PID closed loops into the emulator and demonstration databases.
    GenDb(Common),
    /// Fit the emulator network to the exploration database.
    TrainEmulator(Common),
    /// Clone the PID controller into the actor network.
    PretrainActor(Common),
    /// Train the actor with zeroth-order policy gradients.
    Train(Common),
    /// Run the configured controller on the scenario.
    Evaluate(Common),
    /// Run several controllers on one shared scenario.
    Compare(Common),
    /// Write CSV series for reward and time-response plots.
    PlotData(Common),
}

fn run(cmd: Command) -> Result<(), LfcError> {
    let load = |c: &Common| RunConfig::load(&c.config, &c.overrides);
    match cmd {
        Command::TunePid(c) => {
            let cfg = load(&c)?;
            let r = pipeline::tune(&cfg)?;
            println!(
                "kp = {}, ki = {}, kd = {}; sum |df| = {:.6e} ({} of {} candidates diverged)",
                r.gains.kp, r.gains.ki, r.gains.kd, r.cost, r.diverged, r.evaluated
            );
        }
        Command::GenDb(c) => {
            let cfg = load(&c)?;
            let (explore, demo) = pipeline::gen_db(&cfg)?;
            println!(
                "exploration database: {} records, dropped episodes {:?}",
                explore.len(),
                explore.meta.dropped
            );
            println!(
                "demonstration database: {} records, dropped episodes {:?}",
                demo.len(),
                demo.meta.dropped
            );
        }
        Command::TrainEmulator(c) => {
            let cfg = load(&c)?;
            let t = pipeline::train_emulator_stage(&cfg)?;
            println!(
                "epochs {} (best {}), validation rmse {:.4e} Hz, target rms {:.4e} Hz",
                t.log.len(),
                t.best_epoch,
                t.validation_rmse,
                t.validation_target_rms
            );
        }
        Command::PretrainActor(c) => {
            let cfg = load(&c)?;
            let p = pipeline::pretrain_stage(&cfg)?;
            println!(
                "epochs {} (best {}), validation mse {:.4e}",
                p.log.len(),
                p.best_epoch,
                p.validation_mse
            );
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let out = pipeline::train_stage(&cfg, &mut |e| {
                eprintln!(
                    "episode {:>4}  R = {:>12.6}  mean|df| = {:.6e}{}",
                    e.episode,
                    e.reward,
                    e.mean_abs_f,
                    if e.diverged { "  (diverged)" } else { "" }
                );
            })?;
            println!("{} actor updates", out.total_updates);
        }
        Command::Evaluate(c) => {
            let cfg = load(&c)?;
            let e = pipeline::evaluate(&cfg)?;
            println!(
                "{}: q_sum {:.6e}, mean|df| {:.6e} Hz, largest {:.6e} Hz, R {:.6e}",
                e.name,
                e.metrics.q_sum,
                e.metrics.mean_abs_f,
                e.metrics.largest_var,
                e.metrics.reward
            );
            println!(
                "wrote {} and {}",
                e.trajectory_path.display(),
                e.metrics_path.display()
            );
            if e.trajectory.diverged {
                let last = e.trajectory.rows.last().map_or(0.0, |r| r.delta_f);
                return Err(LfcError::Diverged {
                    delta_f: last,
                    f_max: cfg.sim.f_max,
                });
            }
        }
        Command::Compare(c) => {
            let cfg = load(&c)?;
            let cmp = pipeline::compare_stage(&cfg)?;
            print!("{}", cmp.to_json());
        }
        Command::PlotData(c) => {
            let cfg = load(&c)?;
            for p in pipeline::plot_data(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
