//! `lindopt`: simulate controlled Lindblad dynamics and optimize control
//! pulses with a perturbed accelerated gradient method.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (with a diagnostic JSON on stderr).

mod artifacts;
mod commands;
mod config;
mod error;
mod estimate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CheckGradOptions, CompareOptions, OptimizeOptions};
use error::Failure;

#[derive(Parser)]
#[command(
    name = "lindopt",
    version,
    about = "Lindblad simulation and quantum optimal control optimization"
)]
struct Cli {
    /// Worker threads for the gradient oracle (default: LINDOPT_THREADS
    /// env var, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config JSON.
    scenario: PathBuf,
    /// Where artifacts go (overrides the config's output.dir; default ./out).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Propagate the initial control field and write the final state.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the control-optimization loop and write trace/summary artifacts.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume from a checkpoint JSON written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Append a finite-difference second-order stationarity check to the
        /// summary (costs O(d²) extra oracle values).
        #[arg(long)]
        second_order: bool,
        /// Checkpoint every this many iterations (overrides the config;
        /// 0 disables).
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Run the plain and interaction-picture pipelines side by side.
    CompareInteraction {
        #[command(flatten)]
        common: CommonArgs,
        /// Interaction-frame slice count (default: config, else ⌈T·‖ℒ₂‖⌉).
        #[arg(long)]
        n_steps: Option<usize>,
        /// Also integrate a dense reference with this many steps.
        #[arg(long)]
        oracle_steps: Option<usize>,
    },
    /// Check finite-difference partials against their analytic bounds.
    CheckGradients {
        #[command(flatten)]
        common: CommonArgs,
        /// Random control points to test.
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// RNG seed for the sample points.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample coordinates uniformly from [-scale, scale].
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Finite-difference step (default: 1e-3·max(1, ‖u‖_∞)).
        #[arg(long)]
        fd_step: Option<f64>,
    },
    /// Evaluate the closed-form cost formulas; nothing is executed.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the optimizer target accuracy ε.
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn init_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("LINDOPT_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                Failure::config(format!("LINDOPT_THREADS must be a positive integer, got {s:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::config("thread count must be ≥ 1"));
        }
        // A second build_global in the same process (e.g. under tests) is
        // harmless; rayon keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads(cli.threads)?;
    match cli.cmd {
        Cmd::Simulate { common } => {
            let scenario =
                commands::load_and_resolve(&common.scenario, common.output_dir.as_deref())?;
            commands::simulate_cmd(&scenario)
        }
        Cmd::Optimize { common, resume, second_order, checkpoint_every } => {
            let scenario =
                commands::load_and_resolve(&common.scenario, common.output_dir.as_deref())?;
            commands::optimize_cmd(
                &scenario,
                &OptimizeOptions { resume, second_order, checkpoint_every },
            )
        }
        Cmd::CompareInteraction { common, n_steps, oracle_steps } => {
            let scenario =
                commands::load_and_resolve(&common.scenario, common.output_dir.as_deref())?;
            commands::compare_interaction_cmd(&scenario, &CompareOptions { n_steps, oracle_steps })
        }
        Cmd::CheckGradients { common, points, seed, scale, fd_step } => {
            let scenario =
                commands::load_and_resolve(&common.scenario, common.output_dir.as_deref())?;
            commands::check_gradients_cmd(
                &scenario,
                &CheckGradOptions { points, seed, scale, fd_step },
            )
        }
        Cmd::Estimate { common, epsilon } => {
            let (config, dir) = config::load_scenario(&common.scenario)?;
            let mut config = config;
            if let Some(eps) = epsilon {
                match &mut config.optimizer {
                    Some(opt) => opt.epsilon = eps,
                    None => {
                        return Err(Failure::config(
                            "--epsilon needs an optimizer section to override",
                        ))
                    }
                }
            }
            let scenario = config.resolve(&dir, common.output_dir.as_deref())?;
            commands::estimate_cmd(&scenario)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Config(msg) => eprintln!("configuration error: {msg}"),
                Failure::Numerical(e) => {
                    let diagnostic = serde_json::json!({
                        "error": "numerical-failure",
                        "detail": e.to_string(),
                    });
                    eprintln!("{diagnostic}");
                }
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
