//! Rotating-frame propagation against the brute-force oracle on the combined model.

use lindopt_core::linalg::{re, sigma_minus, sigma_x, sigma_z, trace_distance, CMatrix};
use lindopt_core::{
    oracle_evolve, oracle_evolve_window, simulate, simulate_interaction,
    simulate_interaction_window, ControlField, DensityState, LindbladModel, SplitModel,
};

/// ‖H₁‖ = 10 against a slow part of norm ≈ 1.
fn stiff_split() -> SplitModel {
    let h1 = sigma_z().map(|z| z * re(10.0));
    let rest = LindbladModel::new(
        sigma_x().map(|z| z * re(0.2)),
        vec![sigma_x()],
        vec![sigma_minus().map(|z| z * re(0.6f64.sqrt()))],
    )
    .unwrap();
    SplitModel::new(h1, rest).unwrap()
}

#[test]
fn interaction_run_matches_oracle_on_stiff_model() {
    let split = stiff_split();
    let horizon = 1.0;
    let u = ControlField::new(1, 4, horizon, vec![0.5, -0.3, 0.4, 0.0, 0.2]).unwrap();
    let rho0 = DensityState::pure(2, 1);
    let eps = 1e-3;
    let out = simulate_interaction(&split, &u, &rho0, horizon, eps, 4).unwrap();
    let combined = split.combined();
    let exact = oracle_evolve(&combined, &u, &rho0, horizon, 200_000).unwrap();
    let dist = trace_distance(out.state.matrix(), exact.matrix());
    println!("stiff interaction run: distance {dist:.3e} (target {eps:.0e})");
    assert!(dist <= eps, "distance {dist:.3e} exceeds {eps:.0e}");
}

#[test]
fn final_error_is_bounded_by_slices_times_worst_slice() {
    let split = stiff_split();
    let horizon = 1.0;
    let n_steps = 4usize;
    let u = ControlField::new(1, 4, horizon, vec![0.5, -0.3, 0.4, 0.0, 0.2]).unwrap();
    let rho0 = DensityState::pure(2, 1);
    let eps = 1e-3;
    let combined = split.combined();

    // Oracle states at every slice boundary.
    let mut boundary = vec![rho0.clone()];
    for i in 0..n_steps {
        let a = horizon * i as f64 / n_steps as f64;
        let b = horizon * (i + 1) as f64 / n_steps as f64;
        let next =
            oracle_evolve_window(&combined, &u, boundary.last().unwrap(), a, b, 50_000).unwrap();
        boundary.push(next);
    }

    // Worst single-slice error, each slice started from the exact state.
    let eps_slice = eps / n_steps as f64;
    let mut worst = 0.0f64;
    for i in 0..n_steps {
        let a = horizon * i as f64 / n_steps as f64;
        let b = horizon * (i + 1) as f64 / n_steps as f64;
        let win = simulate_interaction_window(&split, &u, &boundary[i], a, b, eps_slice).unwrap();
        let d = trace_distance(win.matrix(), boundary[i + 1].matrix());
        worst = worst.max(d);
    }

    let full = simulate_interaction(&split, &u, &rho0, horizon, eps, n_steps).unwrap();
    let final_err = trace_distance(full.state.matrix(), boundary[n_steps].matrix());
    println!(
        "per-slice worst {worst:.3e}, final {final_err:.3e}, slices {n_steps} \
         (bound {:.3e})",
        n_steps as f64 * worst
    );
    // Trace distance contracts under the exact remaining evolution, so slice errors
    // add at most linearly (tiny slack for the non-trace-preserving truncation).
    assert!(final_err <= n_steps as f64 * worst + 1e-6);
    assert!(worst <= eps_slice, "worst slice error {worst:.3e} above {eps_slice:.3e}");
}

#[test]
fn rotating_frame_needs_far_fewer_generator_evaluations() {
    // Same accuracy target on the same stiff model: the rotating frame sets its
    // truncation from ‖ℒ₂‖ ≈ 1 instead of ‖H₁‖ + ‖ℒ₂‖ ≈ 11.
    let split = stiff_split();
    let horizon = 1.0;
    let u = ControlField::new(1, 4, horizon, vec![0.5, -0.3, 0.4, 0.0, 0.2]).unwrap();
    let rho0 = DensityState::pure(2, 1);
    let eps = 1e-3;

    let rotated = simulate_interaction(&split, &u, &rho0, horizon, eps, 1).unwrap();
    let combined = split.combined();
    let plain = simulate(&combined, &u, &rho0, horizon, eps).unwrap();

    let evals_rotated: u64 = rotated.segments.iter().map(|s| s.generator_evals).sum();
    let evals_plain: u64 = plain.segments.iter().map(|s| s.generator_evals).sum();
    println!(
        "generator evaluations: rotated {evals_rotated}, plain {evals_plain} \
         (ratio {:.1})",
        evals_plain as f64 / evals_rotated as f64
    );
    assert!(
        evals_plain >= 4 * evals_rotated,
        "expected ≥4× saving, got {evals_plain} vs {evals_rotated}"
    );

    // Both land on the oracle within the target.
    let exact = oracle_evolve(&combined, &u, &rho0, horizon, 200_000).unwrap();
    assert!(trace_distance(rotated.state.matrix(), exact.matrix()) <= eps);
    assert!(trace_distance(plain.state.matrix(), exact.matrix()) <= eps);
}

#[test]
fn two_qubit_split_matches_oracle() {
    // Stiff ZZ coupling with a slow local drive and a single collective decay.
    let zz = lindopt_core::linalg::kron(&sigma_z(), &sigma_z()).map(|z| z * re(6.0));
    let drive = lindopt_core::linalg::kron(&sigma_x(), &CMatrix::identity(2, 2));
    let l = lindopt_core::linalg::kron(&sigma_minus(), &CMatrix::identity(2, 2))
        .map(|z| z * re(0.4));
    let rest =
        LindbladModel::new(drive.map(|z| z * re(0.3)), vec![drive.clone()], vec![l]).unwrap();
    let split = SplitModel::new(zz, rest).unwrap();
    let horizon = 0.8;
    let u = ControlField::new(1, 2, horizon, vec![0.2, 0.5, -0.1]).unwrap();
    let rho0 = DensityState::pure(4, 2);
    let eps = 1e-3;
    let out = simulate_interaction(&split, &u, &rho0, horizon, eps, 2).unwrap();
    let exact = oracle_evolve(&split.combined(), &u, &rho0, horizon, 150_000).unwrap();
    let dist = trace_distance(out.state.matrix(), exact.matrix());
    println!("two-qubit stiff split: distance {dist:.3e}");
    assert!(dist <= eps);
}
