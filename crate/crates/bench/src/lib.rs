//! Fixed, seedless benchmark fixtures so criterion runs measure the same
//! workload every time.

use lindopt_core::linalg::{identity, kron, projector, re, sigma_minus, sigma_x, sigma_z, CMatrix};
use lindopt_core::{
    ControlField, DensityState, LindbladModel, Observable, ObjectiveConfig, SimMode, SplitModel,
};

/// Resonantly driven qubit with a weak decay channel; one control, eight
/// intervals over T = 4 — the shape of the bundled single-qubit scenarios.
pub fn damped_qubit() -> (LindbladModel, ControlField, DensityState) {
    let model = LindbladModel::new(
        CMatrix::zeros(2, 2),
        vec![sigma_x()],
        vec![sigma_minus().map(|z| z * re(0.1f64.sqrt()))],
    )
    .unwrap();
    let nodes = vec![0.4; 9];
    let u = ControlField::new(1, 8, 4.0, nodes).unwrap();
    (model, u, DensityState::pure(2, 0))
}

/// Two qubits with local splittings, an Ising coupling, local X drives, and
/// independent decay channels; two controls over six intervals, T = 4.
pub fn coupled_pair() -> (LindbladModel, ControlField, DensityState) {
    let sz1 = kron(&sigma_z(), &identity(2));
    let sz2 = kron(&identity(2), &sigma_z());
    let h0 = sz1.map(|z| z * re(0.25))
        + sz2.map(|z| z * re(0.25))
        + kron(&sigma_z(), &sigma_z()).map(|z| z * re(0.5));
    let mu = vec![kron(&sigma_x(), &identity(2)), kron(&identity(2), &sigma_x())];
    let g = re(0.02f64.sqrt());
    let jumps = vec![
        kron(&sigma_minus(), &identity(2)).map(|z| z * g),
        kron(&identity(2), &sigma_minus()).map(|z| z * g),
    ];
    let model = LindbladModel::new(h0, mu, jumps).unwrap();
    let mut nodes = Vec::with_capacity(14);
    for _ in 0..7 {
        nodes.extend([0.3, 0.3]);
    }
    let u = ControlField::new(2, 6, 4.0, nodes).unwrap();
    (model, u, DensityState::pure(4, 0))
}

/// Stiff Hamiltonian split (dominant part ten times the rest) for the
/// rotating-frame path.
pub fn stiff_split() -> (SplitModel, ControlField, DensityState) {
    let h1 = sigma_z().map(|z| z * re(10.0));
    let rest = LindbladModel::new(
        sigma_x().map(|z| z * re(0.2)),
        vec![sigma_x()],
        vec![sigma_minus().map(|z| z * re(0.6f64.sqrt()))],
    )
    .unwrap();
    let split = SplitModel::new(h1, rest).unwrap();
    let u = ControlField::new(1, 4, 1.0, vec![0.5, -0.3, 0.4, 0.0, 0.2]).unwrap();
    (split, u, DensityState::pure(2, 1))
}

/// Full control objective over the damped qubit, in the requested mode.
pub fn qubit_objective(sim_mode: SimMode) -> ObjectiveConfig {
    let (model, u, rho0) = damped_qubit();
    ObjectiveConfig {
        model,
        observable: Observable::new(projector(2, 1)).unwrap(),
        rho0,
        horizon: u.horizon(),
        n_intervals: u.n_intervals(),
        alpha: 0.5,
        maximize: true,
        eps_sim: 2e-3,
        sim_mode,
    }
}
