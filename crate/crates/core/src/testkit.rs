//! Deterministic random fixtures shared by tests and benchmarks.
//!
//! Everything here is seeded; the same seed always produces the same model, control
//! field or state, across platforms.

use crate::linalg::{re, CMatrix, C64, I};
use crate::model::{ControlField, DensityState, LindbladModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_complex_matrix(dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| {
        re(rng.gen_range(-1.0..1.0)) + I * re(rng.gen_range(-1.0..1.0))
    })
}

/// Random Hermitian matrix scaled to the requested spectral norm.
pub fn random_hermitian(dim: usize, norm: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let g = random_complex_matrix(dim, rng);
    let mut h = (&g + g.adjoint()).map(|z| z * re(0.5));
    let s = crate::linalg::spectral_norm(&h);
    if s > 0.0 {
        h.apply(|z| *z *= re(norm / s));
    }
    h
}

/// Random (generally non-normal) matrix scaled to the requested spectral norm.
pub fn random_operator(dim: usize, norm: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let mut g = random_complex_matrix(dim, rng);
    let s = crate::linalg::spectral_norm(&g);
    if s > 0.0 {
        g.apply(|z| *z *= re(norm / s));
    }
    g
}

/// Random normalized model: ‖H₀‖ = 1, ‖μ_β‖ = 1, ‖L_j‖ = `jump_norm`.
pub fn random_model(
    dim: usize,
    n_controls: usize,
    n_jumps: usize,
    jump_norm: f64,
    rng: &mut ChaCha8Rng,
) -> LindbladModel {
    let h0 = random_hermitian(dim, 1.0, rng);
    let mu = (0..n_controls).map(|_| random_hermitian(dim, 1.0, rng)).collect();
    let jumps = (0..n_jumps).map(|_| random_operator(dim, jump_norm, rng)).collect();
    LindbladModel::new(h0, mu, jumps).expect("random model construction")
}

/// Random piecewise-linear control field with node values in `[-amp, amp]`.
pub fn random_control(
    n_controls: usize,
    n_intervals: usize,
    horizon: f64,
    amp: f64,
    rng: &mut ChaCha8Rng,
) -> ControlField {
    let nodes = (0..n_controls * (n_intervals + 1))
        .map(|_| rng.gen_range(-amp..amp))
        .collect();
    ControlField::new(n_controls, n_intervals, horizon, nodes).expect("random control")
}

/// Random full-rank density matrix ρ = GG†/tr(GG†).
pub fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityState {
    let g = random_complex_matrix(dim, rng);
    let mut rho = &g * g.adjoint();
    let tr: C64 = rho.diagonal().iter().sum();
    rho.apply(|z| *z /= tr);
    DensityState::new(rho).expect("random density")
}
