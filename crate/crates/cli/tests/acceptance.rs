//! Acceptance suite: ten end-to-end checks covering analytic reproduction,
//! engine-vs-reference agreement, proved error bounds, optimizer guarantees,
//! artifact determinism, and the cost estimator's closed-form values.
//!
//! Each test is one pass/fail line; together they gate the build.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use lindopt_core::linalg::{
    hermiticity_defect, min_eigenvalue_hermitian, re, sigma_minus, sigma_x, sigma_z,
    trace_distance, CMatrix,
};
use lindopt_core::objective::GradientSample;
use lindopt_core::pagd::{ObjectiveOracle, PagdDriver, PagdParams, StepEvent, TraceRecord};
use lindopt_core::{
    kraus_series_step, oracle_evolve, oracle_evolve_window, simulate, simulate_interaction,
    simulate_interaction_window, testkit, ControlField, DensityState, LindbladModel, Result,
    SimulationPlan, SplitModel, Termination,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lindopt")
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").canonicalize().unwrap()
}

fn run_bin(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary should launch")
}

fn assert_ok(out: &Output, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "{what} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Load a bundled scenario, absolutize its model path, apply `patch`, write
/// the result into `dir` under `name`.
fn derived_scenario(dir: &Path, base_name: &str, name: &str, patch: impl FnOnce(&mut Value)) -> PathBuf {
    let base = scenarios_dir().join(format!("{base_name}.json"));
    let mut config: Value = serde_json::from_str(&fs::read_to_string(&base).unwrap()).unwrap();
    let model_rel = config["model"].as_str().unwrap().to_owned();
    config["model"] = json!(scenarios_dir().join(model_rel).to_str().unwrap());
    patch(&mut config);
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn read_json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn gaussian_direction(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut v = DVector::from_fn(d, |_, _| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    let n = v.norm();
    if n > 0.0 {
        v /= n;
    }
    v
}

// ---------------------------------------------------------------------------
// 1. analytic amplitude-damping decay
// ---------------------------------------------------------------------------

/// A driftless qubit with a single decay channel L = √γ·σ₋ has the closed-form
/// excited population ρ₁₁(T) = e^{−γT}. The engine at plan accuracy 1e-4 must
/// reproduce it to 5e-4 across decay depths γT ∈ {0.1, 0.5, 1.0}, each run in
/// under ten seconds.
#[test]
fn analytic_amplitude_damping_decay() {
    let gamma = 1.0f64;
    let model = LindbladModel::new(
        CMatrix::zeros(2, 2),
        vec![sigma_x()],
        vec![sigma_minus().map(|z| z * re(gamma.sqrt()))],
    )
    .unwrap();
    let rho0 = DensityState::pure(2, 1);

    for horizon in [0.1f64, 0.5, 1.0] {
        let u = ControlField::new(1, 1, horizon, vec![0.0, 0.0]).unwrap();
        let started = Instant::now();
        let out = simulate(&model, &u, &rho0, horizon, 1e-4).unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        let p11 = out.state.matrix()[(1, 1)].re;
        let exact = (-gamma * horizon).exp();
        println!(
            "gammaT = {:.1}: population {p11:.8} vs analytic {exact:.8} \
             (|diff| {:.2e}), {elapsed:.3} s",
            gamma * horizon,
            (p11 - exact).abs()
        );
        assert!(
            (p11 - exact).abs() <= 5e-4,
            "population {p11} deviates from e^(-gammaT) = {exact} beyond 5e-4"
        );
        assert!(elapsed < 10.0, "run took {elapsed:.1} s, budget is 10 s");
    }
}

// ---------------------------------------------------------------------------
// 2. engine vs reference integrator on random models
// ---------------------------------------------------------------------------

/// Twenty random one- and two-qubit models with random piecewise-linear
/// controls (T ≤ 2): the series engine at ε = 1e-4 stays within 1e-3 trace
/// distance of a 10⁵-step reference integration, and every engine output
/// satisfies the physical-channel invariants.
#[test]
fn engine_matches_reference_on_random_models() {
    let mut worst = 0.0f64;
    for i in 0..20usize {
        let mut rng = testkit::rng(400 + i as u64);
        let dim = if i < 10 { 2 } else { 4 };
        let n_controls = 1 + i % 2;
        let n_jumps = 1 + (i / 2) % 2;
        let horizon = 0.5 + 1.5 * (i as f64 / 19.0);
        let model = testkit::random_model(dim, n_controls, n_jumps, 0.6, &mut rng);
        let u = testkit::random_control(n_controls, 4, horizon, 0.8, &mut rng);
        let rho0 = testkit::random_density(dim, &mut rng);

        let out = simulate(&model, &u, &rho0, horizon, 1e-4).unwrap();
        let reference = oracle_evolve(&model, &u, &rho0, horizon, 100_000).unwrap();
        let dist = trace_distance(out.state.matrix(), reference.matrix());
        worst = worst.max(dist);
        assert!(
            dist <= 1e-3,
            "model {i} (dim {dim}, T = {horizon:.2}): distance {dist:.3e} above 1e-3"
        );

        // Physical-channel invariants on the engine output.
        let m = out.state.matrix();
        assert!(
            out.state.trace_defect().abs() <= out.error_bound,
            "model {i}: trace defect {:.3e} above the plan bound {:.3e}",
            out.state.trace_defect(),
            out.error_bound
        );
        assert!(
            hermiticity_defect(m) <= 1e-10,
            "model {i}: hermiticity defect {:.3e}",
            hermiticity_defect(m)
        );
        let lambda_min = min_eigenvalue_hermitian(m);
        assert!(lambda_min >= -1e-6, "model {i}: min eigenvalue {lambda_min:.3e}");
    }
    println!("20 random models: worst engine-vs-reference distance {worst:.3e} (target 1e-3)");
}

// ---------------------------------------------------------------------------
// 3. truncation error bound and superlinear decay
// ---------------------------------------------------------------------------

/// Over one unit-length rescaled segment, truncating both series at order K
/// keeps the measured error under 32·e^{5t}·t^{K+2}/(K+1)! at t = 1 for every
/// K ∈ {1..6}, and the error falls superlinearly (ratios between consecutive
/// orders shrink).
#[test]
fn series_truncation_error_bound_and_superlinear_decay() {
    // ‖H‖ + ½Σ‖L‖² = 0.5 + 0.5 = 1, so [0, 1] in physical time is exactly one
    // unit of rescaled clock.
    let model = LindbladModel::new(
        sigma_z().map(|z| z * re(0.5)),
        vec![sigma_x()],
        vec![sigma_minus()],
    )
    .unwrap();
    let u = ControlField::new(1, 1, 1.0, vec![0.0, 0.0]).unwrap();
    let mut rng = testkit::rng(17);
    let rho0 = testkit::random_density(2, &mut rng);

    let plan = |k: usize| SimulationPlan {
        k_duhamel: k,
        k_dyson: k,
        q: 4096,
        m_nodes: 8192,
        segments: 1,
        epsilon: 1e-4,
        term_cap: None,
    };
    let reference = kraus_series_step(&model, &u, &rho0, 0.0, 1.0, &plan(8)).unwrap();

    let errors: Vec<f64> = (1..=6)
        .map(|k| {
            let out = kraus_series_step(&model, &u, &rho0, 0.0, 1.0, &plan(k)).unwrap();
            trace_distance(out.matrix(), reference.matrix())
        })
        .collect();

    let factorial = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    for (idx, err) in errors.iter().enumerate() {
        let k = idx + 1;
        let bound = 32.0 * 5.0f64.exp() / factorial(k + 1);
        println!("K = {k}: measured error {err:.6e}, bound {bound:.3e}");
        assert!(err <= &bound, "K = {k}: error {err:.3e} above the bound {bound:.3e}");
    }
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "error did not decrease: {:?}", errors);
    }
    // Superlinear: factorial suppression makes the decay rate itself improve.
    // A geometric (merely linear) decay has one fixed per-order factor, so two
    // robust signatures separate the regimes even though individual ratios
    // jitter from sign interference between the two series:
    //   (a) the average per-order factor over K = 3..6 clearly beats the one
    //       over K = 1..3, and
    //   (b) the last error undercuts the geometric extrapolation from the
    //       first decay step by a wide margin.
    let early = (errors[2] / errors[0]).powf(0.5);
    let late = (errors[5] / errors[2]).powf(1.0 / 3.0);
    println!("average decay factor: {early:.4} over K = 1..3, {late:.4} over K = 3..6");
    assert!(
        late < 0.75 * early,
        "decay rate did not improve: early factor {early:.4}, late factor {late:.4}"
    );
    let geometric = errors[0] * (errors[1] / errors[0]).powi(5);
    println!("measured err(6) {:.3e} vs geometric extrapolation {geometric:.3e}", errors[5]);
    assert!(
        errors[5] < 0.5 * geometric,
        "err(6) = {:.3e} does not beat the geometric extrapolation {geometric:.3e}",
        errors[5]
    );
}

// ---------------------------------------------------------------------------
// 4. rotating-frame agreement and slice-error accumulation
// ---------------------------------------------------------------------------

/// Stiff benchmark with the dominant Hamiltonian ten times the rest: the
/// rotating-frame propagator matches the reference to 1e-3, and the final
/// error is bounded by n_steps × the worst single-slice error.
#[test]
fn rotating_frame_agreement_and_slice_error_accumulation() {
    let h1 = sigma_z().map(|z| z * re(10.0));
    let rest = LindbladModel::new(
        sigma_x().map(|z| z * re(0.2)),
        vec![sigma_x()],
        vec![sigma_minus().map(|z| z * re(0.6f64.sqrt()))],
    )
    .unwrap();
    let split = SplitModel::new(h1, rest).unwrap();
    let combined = split.combined();

    let horizon = 1.0;
    let n_steps = 4usize;
    let eps = 1e-3;
    let u = ControlField::new(1, 4, horizon, vec![0.5, -0.3, 0.4, 0.0, 0.2]).unwrap();
    let rho0 = DensityState::pure(2, 1);

    // Reference states at every slice boundary.
    let mut boundary = vec![rho0.clone()];
    for i in 0..n_steps {
        let a = horizon * i as f64 / n_steps as f64;
        let b = horizon * (i + 1) as f64 / n_steps as f64;
        let next =
            oracle_evolve_window(&combined, &u, boundary.last().unwrap(), a, b, 50_000).unwrap();
        boundary.push(next);
    }

    let full = simulate_interaction(&split, &u, &rho0, horizon, eps, n_steps).unwrap();
    let final_err = trace_distance(full.state.matrix(), boundary[n_steps].matrix());
    assert!(final_err <= 1e-3, "rotating-frame distance {final_err:.3e} above 1e-3");

    // Worst single-slice error with each slice started from the exact state.
    let eps_slice = eps / n_steps as f64;
    let mut worst = 0.0f64;
    for i in 0..n_steps {
        let a = horizon * i as f64 / n_steps as f64;
        let b = horizon * (i + 1) as f64 / n_steps as f64;
        let win = simulate_interaction_window(&split, &u, &boundary[i], a, b, eps_slice).unwrap();
        worst = worst.max(trace_distance(win.matrix(), boundary[i + 1].matrix()));
    }
    println!(
        "final error {final_err:.3e} vs slices × worst = {} × {worst:.3e} = {:.3e}",
        n_steps,
        n_steps as f64 * worst
    );
    assert!(
        final_err <= n_steps as f64 * worst + 1e-9,
        "final error {final_err:.3e} exceeds {n_steps} × worst slice error {worst:.3e}"
    );
}

// ---------------------------------------------------------------------------
// 5. finite-difference partials respect the derivative bounds
// ---------------------------------------------------------------------------

/// On all three bundled scenarios (normalized operators), raw terminal-cost
/// partials measured at 20 random control points stay within
/// |∂J₁/∂u| ≤ 2δt·‖μ‖·‖O‖ and |∂²J₁/∂u²| ≤ 6δt²·‖μ‖²·‖O‖².
#[test]
fn finite_difference_partials_respect_derivative_bounds() {
    // (scenario, 2δt‖μ‖‖O‖, 6δt²‖μ‖²‖O‖) with δt = T/N and all norms 1.
    let cases = [
        ("amplitude-damping", 2.0 * 0.5, 6.0 * 0.25),
        ("driven-qubit-purity", 2.0 * 0.5, 6.0 * 0.25),
        ("two-qubit-entangler", 2.0 * (4.0 / 6.0), 6.0 * (4.0 / 6.0) * (4.0 / 6.0)),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (name, bound_first, bound_second) in cases {
        let scenario = scenarios_dir().join(format!("{name}.json"));
        let out_dir = dir.path().join(name);
        let out = run_bin(&[
            "check-gradients",
            scenario.to_str().unwrap(),
            "--points",
            "20",
            "--seed",
            "5",
            "--fd-step",
            "0.05",
            "--output-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_ok(&out, &format!("check-gradients on {name}"));

        let report = read_json_file(&out_dir.join("gradients.json"));
        assert!((report["bound_first"].as_f64().unwrap() - bound_first).abs() < 1e-12);
        assert!((report["bound_second"].as_f64().unwrap() - bound_second).abs() < 1e-12);
        assert_eq!(report["passed"], true, "{name}: {report}");
        println!(
            "{name}: max |dJ1/du| {:.4e} <= {bound_first:.4}, max |d2J1/du2| {:.4e} <= {bound_second:.4}",
            report["max_abs_first"].as_f64().unwrap(),
            report["max_abs_second"].as_f64().unwrap(),
        );
    }
}

// ---------------------------------------------------------------------------
// 6. per-step energy decrease on full optimization runs
// ---------------------------------------------------------------------------

/// With high-accuracy reference gradients, every plain accelerated step of a
/// full run must obey the per-step decrease of E_t = f + ‖v‖²/(2η):
/// E_{t+1} − E_t ≤ −(θ/2η)‖v_t‖² − (η/8)‖∇f(y_t)‖² + (5/4)η·ε_g² + 1e-9.
#[test]
fn per_step_energy_decrease_holds_on_full_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cases =
        [("amplitude-damping", 1000u64), ("driven-qubit-purity", 1000), ("two-qubit-entangler", 800)];
    for (name, steps) in cases {
        let scenario = derived_scenario(dir.path(), name, &format!("{name}-ref"), |c| {
            c["simulation"] = json!({"eps": 0.002, "mode": "oracle", "steps": steps});
        });
        let out_dir = dir.path().join(name);
        let out = run_bin(&[
            "optimize",
            scenario.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_ok(&out, &format!("optimize on {name}"));

        let summary = read_json_file(&out_dir.join("summary.json"));
        let eta = summary["params"]["eta"].as_f64().unwrap();
        let theta = summary["params"]["theta"].as_f64().unwrap();
        let eps_g = summary["params"]["eps_g"].as_f64().unwrap();

        let mut reader = csv::Reader::from_path(out_dir.join("trace.csv")).unwrap();
        let rows: Vec<TraceRecord> =
            reader.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert!(rows.len() >= 10, "{name}: run too short to be meaningful");

        let mut checked = 0usize;
        for w in rows.windows(2) {
            if !matches!(w[0].event, StepEvent::Agd) {
                continue;
            }
            let lhs = w[1].energy - w[0].energy;
            let rhs = -(theta / (2.0 * eta)) * w[0].v_norm_sq
                - (eta / 8.0) * w[0].grad_y_true_norm.powi(2)
                + 1.25 * eta * eps_g * eps_g
                + 1e-9;
            assert!(
                lhs <= rhs,
                "{name} iter {}: energy change {lhs:.6e} above the allowance {rhs:.6e}",
                w[0].iter
            );
            checked += 1;
        }
        println!("{name}: {checked} accelerated steps all satisfy the energy decrease");
        assert!(checked >= 10, "{name}: only {checked} accelerated steps checked");
    }
}

// ---------------------------------------------------------------------------
// 7. saddle escape reaches second-order points
// ---------------------------------------------------------------------------

/// d = 10 landscape with one strict-saddle direction (curvature −1.5√(ϱε)),
/// quartic confinement, and the remaining directions weakly convex. Starting
/// within the perturbation radius of the saddle with noise at the second-order
/// threshold, at least 95 of 100 seeds must visit a second-order stationary
/// point (‖∇f‖ ≤ ε and λ_min(∇²f) ≥ −√(ϱε)) within 3𝒯 iterations.
struct SaddleLandscape {
    eps_g: f64,
    seed: u64,
    calls: u64,
}

const SAD_NEG: f64 = 0.948_683_298_050_513_8; // 1.5·√(ϱε) at ϱ = 2.5, ε = 0.16
const SAD_POS: f64 = 0.316_227_766_016_837_94; // 0.5·√(ϱε)

impl SaddleLandscape {
    fn f(x: &DVector<f64>) -> f64 {
        let mut v = 0.5 * x[0] * x[0] - 0.5 * SAD_NEG * x[1] * x[1] + x[1].powi(4) / 24.0;
        for i in 2..x.len() {
            v += 0.5 * SAD_POS * x[i] * x[i];
        }
        v
    }

    fn grad(x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[0] = x[0];
        g[1] = -SAD_NEG * x[1] + x[1].powi(3) / 6.0;
        for i in 2..x.len() {
            g[i] = SAD_POS * x[i];
        }
        g
    }

    /// The Hessian is diagonal; its smallest eigenvalue is explicit.
    fn lambda_min(x: &DVector<f64>) -> f64 {
        (-SAD_NEG + 0.5 * x[1] * x[1]).min(SAD_POS).min(1.0)
    }
}

impl ObjectiveOracle for SaddleLandscape {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64> {
        Ok(Self::f(x))
    }

    fn gradient(&mut self, x: &DVector<f64>) -> Result<GradientSample> {
        let g = Self::grad(x);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.calls);
        self.calls += 1;
        let noise = gaussian_direction(x.len(), &mut rng) * (self.eps_g * rng.gen_range(0.0..1.0));
        Ok(GradientSample { noisy: &g + &noise, noise_norm: noise.norm(), true_fd: g })
    }
}

#[test]
fn saddle_escape_reaches_second_order_points() {
    let d = 10usize;
    let epsilon = 0.16f64;
    let rho = 2.5f64;
    let curvature_floor = -(rho * epsilon).sqrt();
    let probe = PagdParams::derive(2.0, rho, epsilon, 0.05, 1.4, d, 0.0, None, 4.0).unwrap();
    let eps_g = probe.eps_g_second_order;
    let params = PagdParams::derive(2.0, rho, epsilon, 0.05, 1.4, d, eps_g, None, 4.0).unwrap();
    let window = (3.0 * params.t_round).ceil() as usize;

    let mut successes = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let x0 = gaussian_direction(d, &mut rng) * rng.gen_range(0.0..params.r);
        let mut oracle = SaddleLandscape { eps_g, seed: 40_000 + seed, calls: 0 };
        let mut driver = PagdDriver::new(&mut oracle, &params, &x0, seed).unwrap();
        let mut reached = false;
        for _ in 0..window {
            let done = driver.step().unwrap();
            let x = &driver.state().x;
            if SaddleLandscape::grad(x).norm() <= epsilon
                && SaddleLandscape::lambda_min(x) >= curvature_floor
            {
                reached = true;
                break;
            }
            if done.is_some() {
                break;
            }
        }
        if reached {
            successes += 1;
        }
    }
    println!(
        "saddle escape: {successes}/100 seeds reached a second-order point within 3T = {window} \
         iterations (need >= 95)"
    );
    assert!(successes >= 95, "only {successes}/100 seeds escaped within {window} iterations");
}

// ---------------------------------------------------------------------------
// 8. noise-threshold certification on the cosine benchmark
// ---------------------------------------------------------------------------

/// d = 20 product-of-cosines with quadratic confinement; smoothness constants
/// measured empirically (×1.2 margin). With gradient noise at the first-order
/// threshold, ≥ 90/100 seeds certify ‖∇f‖ ≤ ε within the iteration budget;
/// with a clean oracle the same suite passes 100/100.
struct CosineLandscape {
    lambda_c: f64,
    eps_g: f64,
    seed: u64,
    calls: u64,
}

impl CosineLandscape {
    fn f(&self, x: &DVector<f64>) -> f64 {
        -x.iter().map(|xi| xi.cos()).product::<f64>() + 0.5 * self.lambda_c * x.norm_squared()
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x.len();
        DVector::from_fn(d, |i, _| {
            let prod_rest: f64 =
                (0..d).filter(|&j| j != i).map(|j| x[j].cos()).product();
            x[i].sin() * prod_rest + self.lambda_c * x[i]
        })
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        DMatrix::from_fn(d, d, |i, k| {
            if i == k {
                let prod_rest: f64 =
                    (0..d).filter(|&j| j != i).map(|j| x[j].cos()).product();
                x[i].cos() * prod_rest + self.lambda_c
            } else {
                let prod_rest: f64 =
                    (0..d).filter(|&j| j != i && j != k).map(|j| x[j].cos()).product();
                x[i].sin() * x[k].sin() * prod_rest
            }
        })
    }
}

impl ObjectiveOracle for CosineLandscape {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.f(x))
    }

    fn gradient(&mut self, x: &DVector<f64>) -> Result<GradientSample> {
        let g = self.grad(x);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.calls);
        self.calls += 1;
        // Worst-case-magnitude noise: a full ε_g kick in a random direction.
        let noise = gaussian_direction(x.len(), &mut rng) * self.eps_g;
        Ok(GradientSample { noisy: &g + &noise, noise_norm: noise.norm(), true_fd: g })
    }
}

#[test]
fn noise_threshold_certification_on_cosine_benchmark() {
    let d = 20usize;
    let lambda_c = 0.05;
    let template = CosineLandscape { lambda_c, eps_g: 0.0, seed: 0, calls: 0 };

    // Empirical smoothness constants over the region the runs visit. At
    // generic points of the box the 19-factor cosine product is negligible,
    // so curvature concentrates near the minima; sample along rays from the
    // attractor at the origin as well as across the start box so the
    // measured maxima reflect where trajectories actually converge.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ell_emp = 0.0f64;
    let mut rho_emp = 0.0f64;
    for i in 0..300 {
        let x = if i % 2 == 0 {
            gaussian_direction(d, &mut rng) * rng.gen_range(0.0..2.0)
        } else {
            DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))
        };
        let h = template.hessian(&x);
        let norm = h.clone().symmetric_eigen().eigenvalues.amax();
        ell_emp = ell_emp.max(norm);
        let step = 0.1;
        let y = &x + gaussian_direction(d, &mut rng) * step;
        let dh = (template.hessian(&y) - &h).symmetric_eigen().eigenvalues.amax();
        rho_emp = rho_emp.max(dh / step);
    }
    let ell = 1.2 * ell_emp;
    let rho = 1.2 * rho_emp;
    println!("measured constants: ell = {ell:.3} (1.2 × {ell_emp:.3}), rho = {rho:.3}");

    let epsilon = 0.1;
    let probe = PagdParams::derive(ell, rho, epsilon, 0.05, 2.5, d, 0.0, None, 4.0).unwrap();
    let eps_g_first = probe.eps_g_first_order;

    let run_suite = |eps_g: f64| -> usize {
        let mut params =
            PagdParams::derive(ell, rho, epsilon, 0.05, 2.5, d, eps_g, None, 4.0).unwrap();
        // A tighter budget than the derived worst case; certifying inside it
        // is strictly harder, and it keeps the suite bounded in time.
        params.k_max = params.k_max.min(20_000);
        let mut passed = 0usize;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(5_000 + seed);
            let x0 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let mut oracle =
                CosineLandscape { lambda_c, eps_g, seed: 60_000 + seed, calls: 0 };
            let out = lindopt_core::run_pagd(&mut oracle, &params, &x0, seed).unwrap();
            if out.termination == Termination::GradientCertified
                && out.best_grad_norm <= epsilon
            {
                passed += 1;
            }
        }
        passed
    };

    let noisy = run_suite(eps_g_first);
    println!("noise at the first-order threshold ({eps_g_first:.3e}): {noisy}/100 certified");
    assert!(noisy >= 90, "only {noisy}/100 certified under threshold noise");

    let clean = run_suite(0.0);
    println!("clean oracle: {clean}/100 certified");
    assert_eq!(clean, 100, "clean-oracle suite must certify every seed");
}

// ---------------------------------------------------------------------------
// 9. re-runs produce byte-identical artifacts
// ---------------------------------------------------------------------------

/// Same config + same seed ⇒ every CSV/JSON artifact is byte-identical,
/// across all four artifact-producing subcommands.
#[test]
fn reruns_produce_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = derived_scenario(dir.path(), "amplitude-damping", "det", |c| {
        c["optimizer"]["k_max_cap"] = json!(12);
        c["optimizer"]["checkpoint_every"] = json!(5);
    });
    let path = scenario.to_str().unwrap();

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", path]),
        ("optimize", vec!["optimize", path]),
        ("check-gradients", vec!["check-gradients", path, "--points", "2", "--fd-step", "0.05"]),
        ("estimate", vec!["estimate", path]),
    ];
    for (what, args) in commands {
        let mut produced: Vec<(String, Vec<u8>)> = Vec::new();
        for pass in ["a", "b"] {
            let out_dir = dir.path().join(format!("{what}-{pass}"));
            let mut full = args.clone();
            full.push("--output-dir");
            full.push(out_dir.to_str().unwrap());
            let out = run_bin(&full);
            assert_ok(&out, what);

            let mut files: Vec<_> = fs::read_dir(&out_dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            files.sort();
            assert!(!files.is_empty(), "{what} produced no artifacts");
            let bytes: Vec<(String, Vec<u8>)> = files
                .iter()
                .map(|p| {
                    (p.file_name().unwrap().to_str().unwrap().to_owned(), fs::read(p).unwrap())
                })
                .collect();
            if produced.is_empty() {
                produced = bytes;
            } else {
                assert_eq!(
                    produced.len(),
                    bytes.len(),
                    "{what}: artifact sets differ between runs"
                );
                for ((name_a, a), (name_b, b)) in produced.iter().zip(&bytes) {
                    assert_eq!(name_a, name_b);
                    assert_eq!(a, b, "{what}/{name_a} differs between identical runs");
                }
                println!("{what}: {} artifacts byte-identical", bytes.len());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 10. estimator reproduces hand-computed values
// ---------------------------------------------------------------------------

/// Closed-form pins: series order K = 4 at ε_sim = 1e-3; gradient time grid
/// N = ⌈T^{3/2}/√ε⌉ = 80 at T = 4, ε = 0.01; halving ε multiplies the
/// first-order query count by exactly 2^{23/8}.
#[test]
fn estimator_reproduces_hand_computed_values() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = derived_scenario(dir.path(), "amplitude-damping", "estimate", |c| {
        c["simulation"]["eps"] = json!(1e-3);
    });
    let path = scenario.to_str().unwrap();

    let run_estimate = |epsilon: Option<&str>, out: &Path| -> Value {
        let mut args = vec!["estimate", path, "--output-dir", out.to_str().unwrap()];
        if let Some(e) = epsilon {
            args.extend(["--epsilon", e]);
        }
        let output = run_bin(&args);
        assert_ok(&output, "estimate");
        read_json_file(&out.join("estimate.json"))
    };

    let base = run_estimate(Some("0.01"), &dir.path().join("e1"));
    assert_eq!(
        base["plan"]["k_duhamel"], 4,
        "series order at eps_sim = 1e-3: {}",
        base["plan"]
    );
    assert_eq!(base["time_steps"], 80, "N = ceil(T^1.5/sqrt(eps)) at T = 4, eps = 0.01");

    let halved = run_estimate(Some("0.005"), &dir.path().join("e2"));
    let ratio = halved["first_order_queries"].as_f64().unwrap()
        / base["first_order_queries"].as_f64().unwrap();
    let expected = 2.0f64.powf(23.0 / 8.0);
    println!("query growth under eps halving: {ratio:.12} (2^(23/8) = {expected:.12})");
    assert!(
        (ratio / expected - 1.0).abs() <= 1e-12,
        "query ratio {ratio} differs from 2^(23/8) = {expected}"
    );
}
