//! The five subcommands: simulate, optimize, compare-interaction,
//! check-gradients, estimate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use lindopt_core::linalg::trace_distance;
use lindopt_core::model::{be_norm_inf, be_norm_l1, default_quad_cells};
use lindopt_core::{
    check_second_order, oracle_evolve, simulate, simulate_interaction, CMatrix, ControlField,
    ControlOracle, DensityState, NoiseMode, ObjectiveConfig, Observable, PagdDriver, PagdParams,
    SecondOrderReport, SegmentDiagnostic, SimMode, SimulationPlan, SplitModel, Termination,
};

use crate::artifacts::{
    ensure_dir, read_checkpoint, write_checkpoint, write_json, CheckpointFile, TraceWriter,
};
use crate::config::{MatrixField, OptimizerSpec, ResolvedScenario};
use crate::error::{CliResult, Failure};
use crate::estimate;

// ---------------------------------------------------------------------------
// shared simulation plumbing
// ---------------------------------------------------------------------------

/// One propagation through whichever pipeline the scenario configured,
/// with uniform diagnostics.
struct SimOutcome {
    state: DensityState,
    plan: Option<SimulationPlan>,
    error_bound: Option<f64>,
    segments: Vec<SegmentDiagnostic>,
}

fn run_sim(obj: &ObjectiveConfig, u: &ControlField) -> Result<SimOutcome, Failure> {
    match obj.sim_mode {
        SimMode::Kraus => {
            let r = simulate(&obj.model, u, &obj.rho0, obj.horizon, obj.eps_sim)?;
            Ok(SimOutcome {
                state: r.state,
                plan: Some(r.plan),
                error_bound: Some(r.error_bound),
                segments: r.segments,
            })
        }
        SimMode::Oracle { steps } => {
            let state = oracle_evolve(&obj.model, u, &obj.rho0, obj.horizon, steps)?;
            Ok(SimOutcome { state, plan: None, error_bound: None, segments: Vec::new() })
        }
        SimMode::Interaction { n_steps } => {
            let split = interaction_split(&obj.model)?;
            let r = simulate_interaction(&split, u, &obj.rho0, obj.horizon, obj.eps_sim, n_steps)?;
            Ok(SimOutcome {
                state: r.state,
                plan: Some(r.plan),
                error_bound: Some(r.error_bound),
                segments: r.segments,
            })
        }
    }
}

/// Interaction-picture split with the full drift Hamiltonian as the rotated
/// frame: H₁ = H₀, leaving controls and dissipators in the series.
fn interaction_split(model: &lindopt_core::LindbladModel) -> Result<SplitModel, Failure> {
    let zero = CMatrix::zeros(model.dim, model.dim);
    let rest = lindopt_core::LindbladModel::new(zero, model.mu.clone(), model.jumps.clone())?;
    Ok(SplitModel::new(model.h0.clone(), rest)?)
}

fn total_generator_evals(segments: &[SegmentDiagnostic]) -> u64 {
    segments.iter().map(|s| s.generator_evals).sum()
}

#[derive(Serialize)]
struct StateDiagnostics {
    expectation: f64,
    trace_defect: f64,
    hermiticity_defect: f64,
    min_eigenvalue: f64,
}

fn diagnose(obs: &Observable, state: &DensityState) -> StateDiagnostics {
    StateDiagnostics {
        expectation: obs.expectation(state),
        trace_defect: state.trace_defect(),
        hermiticity_defect: state.hermiticity_defect(),
        min_eigenvalue: state.min_eigenvalue(),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulationReport {
    mode: SimMode,
    eps: f64,
    be_l1: f64,
    #[serde(flatten)]
    diagnostics: StateDiagnostics,
    error_bound: Option<f64>,
    plan: Option<SimulationPlan>,
    generator_evals: u64,
    segments: Vec<SegmentDiagnostic>,
}

pub fn simulate_cmd(scenario: &ResolvedScenario) -> CliResult<()> {
    let obj = &scenario.objective;
    let started = Instant::now();
    let outcome = run_sim(obj, &scenario.initial_control)?;
    let elapsed = started.elapsed();

    let quad = default_quad_cells(obj.horizon);
    let be_l1 = be_norm_l1(&obj.model, &scenario.initial_control, quad)?;
    let report = SimulationReport {
        mode: obj.sim_mode.clone(),
        eps: obj.eps_sim,
        be_l1,
        diagnostics: diagnose(&obj.observable, &outcome.state),
        error_bound: outcome.error_bound,
        plan: outcome.plan,
        generator_evals: total_generator_evals(&outcome.segments),
        segments: outcome.segments,
    };

    ensure_dir(&scenario.output_dir)?;
    write_json(
        &scenario.output_dir.join("rho_final.json"),
        &MatrixField(outcome.state.matrix().clone()),
    )?;
    write_json(&scenario.output_dir.join("simulation.json"), &report)?;

    println!("expectation tr(O rho(T)) = {:.12}", report.diagnostics.expectation);
    println!("trace defect = {:.3e}", report.diagnostics.trace_defect);
    println!("wall-clock: {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OracleCalls {
    gradient: u64,
    value: u64,
}

#[derive(Serialize)]
struct BestReport {
    iter: usize,
    /// Internal minimized objective F = s·tr(𝒪ρ(T)) + α Σ ∫u².
    objective_value: f64,
    /// Noisy gradient norm that selected this iterate.
    grad_norm: f64,
    expectation: f64,
    regularizer: f64,
}

#[derive(Serialize)]
struct OptimizeSummary {
    seed: u64,
    sim_mode: SimMode,
    eps_sim: f64,
    noise_mode: NoiseMode,
    fd_order: usize,
    /// Full derived hyperparameter ledger.
    params: PagdParams,
    resumed_from_iteration: Option<usize>,
    termination: Termination,
    /// True when the run ended on the consecutive small-gradient streak,
    /// certifying ‖∇f‖ ≤ ε at the streak's iterates.
    certified: bool,
    iterations: usize,
    oracle_calls: OracleCalls,
    best: BestReport,
    final_state: StateDiagnostics,
    second_order: Option<SecondOrderReport>,
}

pub struct OptimizeOptions {
    pub resume: Option<PathBuf>,
    pub second_order: bool,
    pub checkpoint_every: Option<u64>,
}

pub fn optimize_cmd(scenario: &ResolvedScenario, opts: &OptimizeOptions) -> CliResult<()> {
    let obj = &scenario.objective;
    let spec: &OptimizerSpec = scenario
        .optimizer
        .as_ref()
        .ok_or_else(|| Failure::config("optimize needs an optimizer section in the scenario"))?;
    let params = spec.pagd_params(obj)?;
    let gradient_cfg = spec.gradient_config();
    gradient_cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    let checkpoint_every = opts.checkpoint_every.unwrap_or(spec.checkpoint_every);

    ensure_dir(&scenario.output_dir)?;
    let trace_path = scenario.output_dir.join("trace.csv");
    let checkpoint_path = scenario.output_dir.join("checkpoint.json");

    let mut oracle = ControlOracle::new(obj, &gradient_cfg);
    let started = Instant::now();

    // Fresh start or checkpoint resume; either way the CSV stays exactly the
    // row-per-iteration record of the whole run.
    let (mut driver, mut trace, resumed_from) = match &opts.resume {
        None => {
            let x0 = scenario.initial_control.to_dvector();
            let driver = PagdDriver::new(&mut oracle, &params, &x0, spec.seed)?;
            (driver, TraceWriter::create(&trace_path)?, None)
        }
        Some(path) => {
            let checkpoint = read_checkpoint(path)?;
            if checkpoint.seed != spec.seed {
                return Err(Failure::config(format!(
                    "checkpoint seed {} does not match the scenario seed {}",
                    checkpoint.seed, spec.seed
                )));
            }
            oracle.grad_calls = checkpoint.grad_calls;
            oracle.value_calls = checkpoint.value_calls;
            let resume_iter = checkpoint.snapshot.iter;
            let driver = PagdDriver::resume(&mut oracle, &params, spec.seed, &checkpoint.snapshot)?;
            (driver, TraceWriter::resume(&trace_path, resume_iter)?, Some(resume_iter))
        }
    };

    let termination = loop {
        let done = driver.step()?;
        if let Some(record) = driver.trace().last() {
            trace.write(record)?;
        }
        if checkpoint_every > 0 && driver.state().iter as u64 % checkpoint_every == 0 {
            trace.flush()?;
            let snapshot = driver.snapshot();
            let checkpoint = CheckpointFile {
                snapshot,
                grad_calls: driver.oracle().grad_calls,
                value_calls: driver.oracle().value_calls,
                seed: spec.seed,
            };
            write_checkpoint(&checkpoint_path, &checkpoint)?;
        }
        if let Some(t) = done {
            break t;
        }
    };
    trace.flush()?;

    let iterations = driver.state().iter;
    let result = driver.finish()?;
    let grad_calls = oracle.grad_calls;
    let value_calls = oracle.value_calls;

    // Re-simulate under the best control for the final-state artifacts.
    let best_u = obj.control_from(&result.best_x)?;
    let outcome = run_sim(obj, &best_u)?;
    let expectation = obj.observable.expectation(&outcome.state);
    let regularizer = obj.regularizer(&best_u);

    let second_order = if opts.second_order {
        let mut check_oracle = ControlOracle::new(obj, &gradient_cfg);
        let fd_step = ObjectiveConfig::default_fd_step(&best_u);
        Some(check_second_order(&mut check_oracle, &params, &result.best_x, fd_step)?)
    } else {
        None
    };

    let elapsed = started.elapsed();
    let summary = OptimizeSummary {
        seed: spec.seed,
        sim_mode: obj.sim_mode.clone(),
        eps_sim: obj.eps_sim,
        noise_mode: spec.noise_mode,
        fd_order: spec.fd_order,
        params,
        resumed_from_iteration: resumed_from,
        termination,
        certified: matches!(termination, Termination::GradientCertified),
        iterations,
        oracle_calls: OracleCalls { gradient: grad_calls, value: value_calls },
        best: BestReport {
            iter: result.best_iter,
            objective_value: result.best_f,
            grad_norm: result.best_grad_norm,
            expectation,
            regularizer,
        },
        final_state: diagnose(&obj.observable, &outcome.state),
        second_order,
    };

    write_json(&scenario.output_dir.join("controls.json"), &best_u)?;
    write_json(
        &scenario.output_dir.join("rho_final.json"),
        &MatrixField(outcome.state.matrix().clone()),
    )?;
    write_json(&scenario.output_dir.join("summary.json"), &summary)?;

    println!(
        "{} after {} iterations: F = {:.9}, |grad| = {:.3e}, tr(O rho) = {:.9}",
        match termination {
            Termination::GradientCertified => "certified",
            Termination::Budget => "budget exhausted",
        },
        iterations,
        result.best_f,
        result.best_grad_norm,
        expectation,
    );
    println!("wall-clock: {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

// ---------------------------------------------------------------------------
// compare-interaction
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PipelineReport {
    #[serde(flatten)]
    diagnostics: StateDiagnostics,
    error_bound: f64,
    generator_evals: u64,
    segments: usize,
}

#[derive(Serialize)]
struct OracleComparison {
    steps: usize,
    trace_distance_plain: f64,
    trace_distance_interaction: f64,
    expectation: f64,
}

#[derive(Serialize)]
struct CompareReport {
    eps: f64,
    n_steps: usize,
    trace_distance: f64,
    plain: PipelineReport,
    interaction: PipelineReport,
    oracle: Option<OracleComparison>,
}

pub struct CompareOptions {
    pub n_steps: Option<usize>,
    pub oracle_steps: Option<usize>,
}

pub fn compare_interaction_cmd(
    scenario: &ResolvedScenario,
    opts: &CompareOptions,
) -> CliResult<()> {
    let obj = &scenario.objective;
    let u = &scenario.initial_control;
    let started = Instant::now();

    let n_steps = match (opts.n_steps, &obj.sim_mode) {
        (Some(n), _) => n,
        (None, SimMode::Interaction { n_steps }) => *n_steps,
        (None, _) => {
            let samples = default_quad_cells(obj.horizon);
            let be_inf = be_norm_inf(&obj.model, u, samples)?;
            ((obj.horizon * be_inf - 1e-9).ceil() as usize).max(1)
        }
    };

    let plain = simulate(&obj.model, u, &obj.rho0, obj.horizon, obj.eps_sim)?;
    let split = interaction_split(&obj.model)?;
    let inter = simulate_interaction(&split, u, &obj.rho0, obj.horizon, obj.eps_sim, n_steps)?;
    let distance = trace_distance(plain.state.matrix(), inter.state.matrix());

    let oracle = match opts.oracle_steps {
        None => None,
        Some(steps) => {
            let reference = oracle_evolve(&obj.model, u, &obj.rho0, obj.horizon, steps)?;
            Some(OracleComparison {
                steps,
                trace_distance_plain: trace_distance(plain.state.matrix(), reference.matrix()),
                trace_distance_interaction: trace_distance(
                    inter.state.matrix(),
                    reference.matrix(),
                ),
                expectation: obj.observable.expectation(&reference),
            })
        }
    };

    let report = CompareReport {
        eps: obj.eps_sim,
        n_steps,
        trace_distance: distance,
        plain: PipelineReport {
            diagnostics: diagnose(&obj.observable, &plain.state),
            error_bound: plain.error_bound,
            generator_evals: total_generator_evals(&plain.segments),
            segments: plain.segments.len(),
        },
        interaction: PipelineReport {
            diagnostics: diagnose(&obj.observable, &inter.state),
            error_bound: inter.error_bound,
            generator_evals: total_generator_evals(&inter.segments),
            segments: inter.segments.len(),
        },
        oracle,
    };
    let elapsed = started.elapsed();

    ensure_dir(&scenario.output_dir)?;
    write_json(&scenario.output_dir.join("compare.json"), &report)?;

    println!("trace distance (plain vs interaction) = {:.3e}", distance);
    println!(
        "generator evals: plain {} vs interaction {}",
        report.plain.generator_evals, report.interaction.generator_evals
    );
    println!("wall-clock: {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

// ---------------------------------------------------------------------------
// check-gradients
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GradientCheckReport {
    points: usize,
    seed: u64,
    scale: f64,
    fd_step: f64,
    /// Analytic bound 2δt‖μ‖‖𝒪‖ on |∂J₁/∂u_j|.
    bound_first: f64,
    /// Analytic bound 6δt²‖μ‖²‖𝒪‖ on |∂²J₁/∂u_j²|.
    bound_second: f64,
    max_abs_first: f64,
    max_abs_second: f64,
    first_within_bound: bool,
    second_within_bound: bool,
    /// Max ∞-norm gap between width-1 and width-2 stencil gradients.
    max_stencil_mismatch: f64,
    /// Max ∞-norm residual of the analytic regularizer gradient vs central FD.
    max_regularizer_residual: f64,
    passed: bool,
}

pub struct CheckGradOptions {
    pub points: usize,
    pub seed: u64,
    pub scale: f64,
    pub fd_step: Option<f64>,
}

pub fn check_gradients_cmd(scenario: &ResolvedScenario, opts: &CheckGradOptions) -> CliResult<()> {
    let obj = &scenario.objective;
    if opts.points == 0 {
        return Err(Failure::config("--points must be ≥ 1"));
    }
    if !(opts.scale > 0.0) {
        return Err(Failure::config("--scale must be positive"));
    }
    let started = Instant::now();

    let d = obj.n_coords();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bound_first = obj.derivative_bound(1);
    let bound_second = obj.derivative_bound(2);

    let mut max_abs_first: f64 = 0.0;
    let mut max_abs_second: f64 = 0.0;
    let mut max_stencil_mismatch: f64 = 0.0;
    let mut max_regularizer_residual: f64 = 0.0;
    let mut fd_step_used = 0.0;

    for _ in 0..opts.points {
        let coords =
            DVector::from_iterator(d, (0..d).map(|_| rng.gen_range(-opts.scale..opts.scale)));
        let u = obj.control_from(&coords)?;
        let h = opts.fd_step.unwrap_or_else(|| ObjectiveConfig::default_fd_step(&u));
        fd_step_used = h;

        // Per-coordinate central stencils on the raw terminal expectation J₁.
        let j1_mid = obj.evaluate_j1(&u)?;
        let (point_first, point_second) = (0..d)
            .into_par_iter()
            .map(|j| -> Result<(f64, f64), Failure> {
                let mut plus = coords.clone();
                plus[j] += h;
                let mut minus = coords.clone();
                minus[j] -= h;
                let j1_plus = obj.evaluate_j1(&obj.control_from(&plus)?)?;
                let j1_minus = obj.evaluate_j1(&obj.control_from(&minus)?)?;
                let first = (j1_plus - j1_minus) / (2.0 * h);
                let second = (j1_plus - 2.0 * j1_mid + j1_minus) / (h * h);
                Ok((first.abs(), second.abs()))
            })
            .try_reduce(|| (0.0, 0.0), |a, b| Ok((a.0.max(b.0), a.1.max(b.1))))?;
        max_abs_first = max_abs_first.max(point_first);
        max_abs_second = max_abs_second.max(point_second);

        // Stencil-order consistency on the full regularized objective.
        let g1 = obj.fd_gradient(&u, 1, h)?;
        let g2 = obj.fd_gradient(&u, 2, h)?;
        max_stencil_mismatch = max_stencil_mismatch.max((&g1 - &g2).amax());

        // Analytic regularizer gradient vs pure-classical central differences.
        let reg_analytic = obj.regularizer_gradient(&u);
        for j in 0..d {
            let mut plus = coords.clone();
            plus[j] += h;
            let mut minus = coords.clone();
            minus[j] -= h;
            let fd = (obj.regularizer(&obj.control_from(&plus)?)
                - obj.regularizer(&obj.control_from(&minus)?))
                / (2.0 * h);
            max_regularizer_residual = max_regularizer_residual.max((fd - reg_analytic[j]).abs());
        }
    }

    let first_within_bound = max_abs_first <= bound_first;
    let second_within_bound = max_abs_second <= bound_second;
    let report = GradientCheckReport {
        points: opts.points,
        seed: opts.seed,
        scale: opts.scale,
        fd_step: fd_step_used,
        bound_first,
        bound_second,
        max_abs_first,
        max_abs_second,
        first_within_bound,
        second_within_bound,
        max_stencil_mismatch,
        max_regularizer_residual,
        passed: first_within_bound && second_within_bound,
    };
    let elapsed = started.elapsed();

    ensure_dir(&scenario.output_dir)?;
    write_json(&scenario.output_dir.join("gradients.json"), &report)?;

    println!(
        "first partials: max {:.6e} vs bound {:.6e} ({})",
        max_abs_first,
        bound_first,
        if first_within_bound { "ok" } else { "VIOLATED" }
    );
    println!(
        "second partials: max {:.6e} vs bound {:.6e} ({})",
        max_abs_second,
        bound_second,
        if second_within_bound { "ok" } else { "VIOLATED" }
    );
    println!("wall-clock: {:.3} s", elapsed.as_secs_f64());

    if !report.passed {
        return Err(Failure::Numerical(lindopt_core::CoreError::BoundViolation(format!(
            "finite-difference partials exceed the analytic bounds: first {max_abs_first:.6e} \
             vs {bound_first:.6e}, second {max_abs_second:.6e} vs {bound_second:.6e}"
        ))));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

pub fn estimate_cmd(scenario: &ResolvedScenario) -> CliResult<()> {
    let report = estimate::estimate(scenario)?;
    ensure_dir(&scenario.output_dir)?;
    write_json(&scenario.output_dir.join("estimate.json"), &report)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Failure::config(format!("cannot serialize estimate: {e}")))?;
    println!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// helpers shared with main
// ---------------------------------------------------------------------------

pub fn load_and_resolve(
    scenario_path: &Path,
    output_dir: Option<&Path>,
) -> CliResult<ResolvedScenario> {
    let (config, dir) = crate::config::load_scenario(scenario_path)?;
    config.resolve(&dir, output_dir)
}
