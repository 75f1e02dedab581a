//! Open quantum system simulation and control optimization.
//!
//! This crate simulates controlled Lindblad master equations
//!
//! ```text
//!   dρ/dt = −i[H₀ + Σ_β u_β(t)·μ_β, ρ] + Σ_j (L_j ρ L_j† − ½{L_j†L_j, ρ})
//! ```
//!
//! with piecewise-linear control fields `u_β`, and optimizes control objectives of the form
//! `tr(𝒪 ρ(T)) − α Σ_β ∫|u_β|²` with a perturbed accelerated gradient method driven by a
//! noisy finite-difference gradient oracle.
//!
//! Modules:
//! - [`linalg`]: dense complex matrix helpers (norms, Hermitian eigensolves, JSON encoding).
//! - [`model`]: the Lindblad model, control fields, states, norms and time rescaling.
//! - [`propagator`]: truncated Kraus/Dyson series propagation and a brute-force oracle integrator.
//! - [`interaction`]: interaction-picture splitting for models with a dominant drift term.
//! - [`objective`]: control objectives, finite-difference gradients, noise injection, smoothness
//!   constants.
//! - [`pagd`]: perturbed accelerated gradient descent with negative-curvature exploitation and
//!   second-order certification.

pub mod error;
pub mod interaction;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod pagd;
pub mod propagator;
pub mod testkit;

pub use error::{CoreError, Result};
pub use interaction::{
    rotate_frame, simulate_interaction, simulate_interaction_window, SplitModel,
};
pub use linalg::CMatrix;
pub use model::{ControlField, DensityState, LindbladModel, Observable, VarMap};
pub use objective::{
    noisy_gradient, GradientOracleConfig, GradientSample, NoiseMode, ObjectiveConfig, SimMode,
};
pub use pagd::{
    agd_step, check_second_order, momentum_point, nce_condition, nce_step, run as run_pagd,
    BestIterate, ControlOracle, ObjectiveOracle, PagdDriver, PagdParams, PagdResult, PagdSnapshot,
    PagdState, SecondOrderReport, StepEvent, Termination, TraceRecord,
};
pub use propagator::{
    dyson_propagator, effective_hamiltonian, kraus_series_step, oracle_evolve,
    oracle_evolve_window, plan_from_epsilon, simulate, simulate_unscaled, simulate_with_options,
    PropagationResult, SegmentDiagnostic, SimulateOptions, SimulationPlan,
};
