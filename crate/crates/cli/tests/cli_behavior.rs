//! End-to-end behavior of the `lindopt` binary: exit codes, diagnostics on
//! stderr, artifact determinism, and checkpoint/resume fidelity.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lindopt")
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").canonicalize().unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary should launch")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Load a bundled scenario, point its model at an absolute path, apply
/// `patch`, and write the result into `dir`.
fn derived_scenario(dir: &Path, name: &str, patch: impl FnOnce(&mut Value)) -> PathBuf {
    let base = scenarios_dir().join("amplitude-damping.json");
    let mut config: Value =
        serde_json::from_str(&fs::read_to_string(&base).unwrap()).unwrap();
    config["model"] =
        json!(scenarios_dir().join("models/amplitude-damping.json").to_str().unwrap());
    patch(&mut config);
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn read_json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

// ---------------------------------------------------------------------------
// exit codes and diagnostics
// ---------------------------------------------------------------------------

#[test]
fn missing_scenario_file_exits_2() {
    let out = run(&["simulate", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_text(&out);
    assert!(err.contains("configuration error"), "stderr: {err}");
    assert!(err.contains("/definitely/not/here.json"), "stderr should name the path: {err}");
}

#[test]
fn config_error_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    // α below the normalized floor 2/T.
    let path = derived_scenario(dir.path(), "bad-alpha", |c| {
        c["objective"]["alpha"] = json!(0.1);
    });
    let out = run(&["simulate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_text(&out);
    assert!(err.contains("α ≥ 2/T") && err.contains("0.1"), "stderr: {err}");
}

#[test]
fn unknown_config_field_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = derived_scenario(dir.path(), "unknown-field", |c| {
        c["bogus_key"] = json!(1);
    });
    let out = run(&["simulate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).contains("bogus_key"));
}

#[test]
fn optimize_without_optimizer_section_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = derived_scenario(dir.path(), "no-optimizer", |c| {
        c.as_object_mut().unwrap().remove("optimizer");
    });
    let out = run(&["optimize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).contains("optimizer section"));
}

/// A 2-step RK4 reference integrator at T = 4 is unstable, so its finite
/// differences genuinely exceed the physical derivative bounds; the binary
/// must flag that as a numerical failure (exit 3) with a JSON diagnostic.
#[test]
fn broken_integrator_bound_violation_exits_3_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = derived_scenario(dir.path(), "coarse-oracle", |c| {
        c["simulation"] = json!({"eps": 0.002, "mode": "oracle", "steps": 2});
    });
    let out = run(&[
        "check-gradients",
        path.to_str().unwrap(),
        "--points",
        "3",
        "--scale",
        "3.0",
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let diag: Value = serde_json::from_str(stderr_text(&out).trim())
        .expect("stderr should carry a JSON diagnostic");
    assert_eq!(diag["error"], "numerical-failure");
    assert!(diag["detail"].as_str().unwrap().contains("bound"));
    // The report is still written so the violation can be inspected.
    let report = read_json_file(&dir.path().join("out/gradients.json"));
    assert_eq!(report["passed"], false);
}

#[test]
fn healthy_scenario_passes_gradient_checks() {
    let dir = tempfile::tempdir().unwrap();
    let path = derived_scenario(dir.path(), "healthy", |_| {});
    let out = run(&[
        "check-gradients",
        path.to_str().unwrap(),
        "--points",
        "2",
        "--fd-step",
        "0.05",
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_text(&out));
    let report = read_json_file(&dir.path().join("out/gradients.json"));
    assert_eq!(report["passed"], true);
}

// ---------------------------------------------------------------------------
// simulate artifacts and cross-mode agreement
// ---------------------------------------------------------------------------

#[test]
fn simulate_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = derived_scenario(dir.path(), "sim", |_| {});
    let out_dir = dir.path().join("out");
    let out = run(&["simulate", path.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_text(&out));

    let report = read_json_file(&out_dir.join("simulation.json"));
    let expectation = report["expectation"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&expectation), "projector expectation: {expectation}");
    // The truncation trace defect is part of the ε = 2·10⁻³ accuracy budget.
    assert!(report["trace_defect"].as_f64().unwrap().abs() <= 0.002);
    // The a-priori bound is clamped to the trivial per-segment bound when the
    // rigorous constant is pessimistic, but it can never undercut ε.
    let bound = report["error_bound"].as_f64().unwrap();
    assert!(bound.is_finite() && bound >= 0.002);

    let rho = read_json_file(&out_dir.join("rho_final.json"));
    assert!(rho.get("data").is_some() || rho.is_array() || rho.is_object());
}

/// The Kraus-series engine (error bound ε = 2·10⁻³) and a fine RK4 reference
/// must agree on the terminal expectation to within that bound.
#[test]
fn kraus_and_oracle_modes_agree_within_the_error_bound() {
    let dir = tempfile::tempdir().unwrap();
    let kraus = derived_scenario(dir.path(), "kraus", |_| {});
    let oracle = derived_scenario(dir.path(), "oracle", |c| {
        c["simulation"] = json!({"eps": 0.002, "mode": "oracle", "steps": 4000});
    });
    let kraus_out = dir.path().join("out-kraus");
    let oracle_out = dir.path().join("out-oracle");
    assert_eq!(
        run(&["simulate", kraus.to_str().unwrap(), "--output-dir", kraus_out.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run(&["simulate", oracle.to_str().unwrap(), "--output-dir", oracle_out.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let e_kraus =
        read_json_file(&kraus_out.join("simulation.json"))["expectation"].as_f64().unwrap();
    let e_oracle =
        read_json_file(&oracle_out.join("simulation.json"))["expectation"].as_f64().unwrap();
    assert!(
        (e_kraus - e_oracle).abs() <= 0.002 + 1e-6,
        "kraus {e_kraus} vs reference {e_oracle}"
    );
}

// ---------------------------------------------------------------------------
// checkpoint / resume
// ---------------------------------------------------------------------------

/// Run A straight through with periodic checkpoints. Then simulate a crash:
/// copy A's trace truncated a couple of rows past the last checkpoint into a
/// fresh dir and resume from A's checkpoint. The resumed artifacts must match
/// run A byte for byte (trace, controls, final state) — the summary may differ
/// only in its `resumed_from_iteration` marker.
#[test]
fn resume_reproduces_the_uninterrupted_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = derived_scenario(dir.path(), "resume", |c| {
        c["optimizer"]["k_max_cap"] = json!(24);
        c["optimizer"]["checkpoint_every"] = json!(10);
    });
    let dir_a = dir.path().join("a");
    let dir_b = dir.path().join("b");

    let out = run(&[
        "optimize",
        scenario.to_str().unwrap(),
        "--output-dir",
        dir_a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_text(&out));

    let checkpoint = read_json_file(&dir_a.join("checkpoint.json"));
    assert_eq!(checkpoint["snapshot"]["iter"], 20, "cap 24 with cadence 10 checkpoints at 20");

    // Crash reconstruction: trace rows exist past the checkpoint (iters 20, 21).
    fs::create_dir_all(&dir_b).unwrap();
    let full_trace = fs::read_to_string(dir_a.join("trace.csv")).unwrap();
    let truncated: Vec<&str> = full_trace.lines().take(1 + 22).collect();
    fs::write(dir_b.join("trace.csv"), format!("{}\n", truncated.join("\n"))).unwrap();

    let out = run(&[
        "optimize",
        scenario.to_str().unwrap(),
        "--resume",
        dir_a.join("checkpoint.json").to_str().unwrap(),
        "--output-dir",
        dir_b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_text(&out));

    for file in ["trace.csv", "controls.json", "rho_final.json"] {
        let a = fs::read(dir_a.join(file)).unwrap();
        let b = fs::read(dir_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} should be byte-identical after resume");
    }

    let mut summary_a = read_json_file(&dir_a.join("summary.json"));
    let mut summary_b = read_json_file(&dir_b.join("summary.json"));
    assert_eq!(summary_a["resumed_from_iteration"], Value::Null);
    assert_eq!(summary_b["resumed_from_iteration"], 20);
    summary_a["resumed_from_iteration"] = Value::Null;
    summary_b["resumed_from_iteration"] = Value::Null;
    assert_eq!(summary_a, summary_b, "summaries should agree apart from the resume marker");
}

#[test]
fn resume_rejects_a_seed_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = derived_scenario(dir.path(), "seed7", |c| {
        c["optimizer"]["k_max_cap"] = json!(12);
        c["optimizer"]["checkpoint_every"] = json!(5);
    });
    let dir_a = dir.path().join("a");
    let out = run(&[
        "optimize",
        scenario.to_str().unwrap(),
        "--output-dir",
        dir_a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_text(&out));

    let reseeded = derived_scenario(dir.path(), "seed8", |c| {
        c["optimizer"]["k_max_cap"] = json!(12);
        c["optimizer"]["checkpoint_every"] = json!(5);
        c["optimizer"]["seed"] = json!(8);
    });
    let out = run(&[
        "optimize",
        reseeded.to_str().unwrap(),
        "--resume",
        dir_a.join("checkpoint.json").to_str().unwrap(),
        "--output-dir",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_text(&out);
    assert!(err.contains("seed"), "stderr: {err}");
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[test]
fn estimate_is_deterministic_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = derived_scenario(dir.path(), "estimate", |_| {});
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "estimate",
            scenario.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_text(&out));
    }
    let a = fs::read(out_a.join("estimate.json")).unwrap();
    let b = fs::read(out_b.join("estimate.json")).unwrap();
    assert_eq!(a, b, "estimate.json should be byte-identical across runs");

    let report = read_json_file(&out_a.join("estimate.json"));
    for key in [
        "first_order_queries",
        "second_order_queries",
        "simulation_queries",
        "per_iteration_queries",
        "time_steps",
    ] {
        let v = &report[key];
        assert!(
            v.as_f64().map(|x| x.is_finite() && x > 0.0).unwrap_or(false)
                || v.as_u64().map(|x| x > 0).unwrap_or(false),
            "{key} should be positive, got {v}"
        );
    }
}
