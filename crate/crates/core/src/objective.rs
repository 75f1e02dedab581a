//! The control objective and its noisy finite-difference gradient oracle.
//!
//! For piecewise-linear controls `u` on `N` intervals the figure of merit is
//!
//! ```text
//!   f(u) = tr(𝒪 ρ(T)) − α·Σ_β ∫₀ᵀ u_β(t)² dt ,
//! ```
//!
//! which the optimizer minimizes as `F(u) = s·tr(𝒪ρ(T)) + α·Σ_β ∫u_β²` with
//! `s = −1` when maximizing the expectation (the default) and `s = +1` when
//! minimizing it. The regularizer integral is exact for piecewise-linear controls:
//! per control block it is the quadratic form `uᵀMu` with the tridiagonal
//! `M = (δt/6)·tridiag(1, 4, 1)` (ends `δt/3`), so its gradient `2αMu` is analytic.
//!
//! Only the expectation term needs simulation. Its gradient is estimated with
//! central finite-difference stencils of order `2m`, coefficients
//! `c_k = (−1)^{k+1}(m!)² / (k·(m−k)!·(m+k)!)`, evaluated in parallel with a
//! deterministic reduction. The oracle optionally perturbs the gradient (bounded
//! norm `ε_g`) to emulate hardware estimation error: a spherical mode (uniform
//! direction, uniform magnitude in `[0, ε_g]`) and an adversarial mode that shrinks
//! the gradient along itself, the worst case for small-gradient termination tests.
//! Function values are always noiseless; the noise contract covers gradients only.
//! Noise is reproducible: stream = call index on a counter-based generator, so
//! parallel or resumed runs see identical draws.

use crate::error::{CoreError, Result};
use crate::interaction::{simulate_interaction, SplitModel};
use crate::linalg::{self, CMatrix};
use crate::model::{ControlField, DensityState, LindbladModel, Observable};
use crate::propagator::{oracle_evolve, simulate};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which propagator evaluates tr(𝒪ρ(T)).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SimMode {
    /// Rescaled truncated-series engine (the default).
    Kraus,
    /// Brute-force integrator with a fixed step count.
    Oracle { steps: usize },
    /// Rotating frame with the drift `h0` as the stiff part.
    Interaction { n_steps: usize },
}

/// Everything needed to evaluate F(u): model, observable, initial state, grids.
#[derive(Clone, Debug)]
pub struct ObjectiveConfig {
    pub model: LindbladModel,
    pub observable: Observable,
    pub rho0: DensityState,
    pub horizon: f64,
    pub n_intervals: usize,
    pub alpha: f64,
    /// `true`: maximize tr(𝒪ρ(T)) (minimize −tr + reg). `false`: minimize tr + reg.
    pub maximize: bool,
    /// Accuracy handed to the simulator per evaluation.
    pub eps_sim: f64,
    pub sim_mode: SimMode,
}

impl ObjectiveConfig {
    /// Structural checks; with `normalized` also the scale conventions
    /// ‖H₀‖, ‖μ_β‖, ‖L_j‖, ‖𝒪‖ ≤ 1 and α ≥ 2/T.
    pub fn validate(&self, normalized: bool) -> Result<()> {
        self.model.validate(normalized)?;
        if self.observable.matrix().nrows() != self.model.dim {
            return Err(CoreError::InvalidModel("observable dimension mismatch".into()));
        }
        if self.rho0.dim() != self.model.dim {
            return Err(CoreError::InvalidState("initial state dimension mismatch".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(CoreError::InvalidControl("horizon must be positive".into()));
        }
        if self.n_intervals == 0 {
            return Err(CoreError::InvalidControl("need at least one control interval".into()));
        }
        if self.alpha < 0.0 {
            return Err(CoreError::InvalidControl("alpha must be nonnegative".into()));
        }
        if !(self.eps_sim > 0.0 && self.eps_sim < 1.0) {
            return Err(CoreError::InvalidPlan("eps_sim must lie in (0, 1)".into()));
        }
        if normalized {
            if self.observable.norm() > 1.0 + 1e-9 {
                return Err(CoreError::InvalidModel(format!(
                    "normalized convention requires ‖𝒪‖ ≤ 1, got {}",
                    self.observable.norm()
                )));
            }
            if self.alpha < 2.0 / self.horizon - 1e-12 {
                return Err(CoreError::InvalidControl(format!(
                    "normalized convention requires α ≥ 2/T = {}, got {}",
                    2.0 / self.horizon,
                    self.alpha
                )));
            }
        }
        Ok(())
    }

    pub fn n_coords(&self) -> usize {
        self.model.n_controls() * (self.n_intervals + 1)
    }

    fn sign(&self) -> f64 {
        if self.maximize {
            -1.0
        } else {
            1.0
        }
    }

    /// Rebuild a control field on this objective's grid from raw coordinates.
    pub fn control_from(&self, x: &DVector<f64>) -> Result<ControlField> {
        ControlField::zeros(self.model.n_controls(), self.n_intervals, self.horizon)
            .with_coords(x)
    }

    /// tr(𝒪 ρ(T)) under the configured simulator.
    pub fn evaluate_j1(&self, u: &ControlField) -> Result<f64> {
        let state = match self.sim_mode {
            SimMode::Kraus => {
                simulate(&self.model, u, &self.rho0, self.horizon, self.eps_sim)?.state
            }
            SimMode::Oracle { steps } => {
                oracle_evolve(&self.model, u, &self.rho0, self.horizon, steps)?
            }
            SimMode::Interaction { n_steps } => {
                let rest = LindbladModel::new(
                    CMatrix::zeros(self.model.dim, self.model.dim),
                    self.model.mu.clone(),
                    self.model.jumps.clone(),
                )?;
                let split = SplitModel::new(self.model.h0.clone(), rest)?;
                simulate_interaction(&split, u, &self.rho0, self.horizon, self.eps_sim, n_steps)?
                    .state
            }
        };
        Ok(self.observable.expectation(&state))
    }

    /// α·Σ_β ∫u_β² — exact for piecewise-linear controls.
    pub fn regularizer(&self, u: &ControlField) -> f64 {
        let h = u.dt();
        let mut acc = 0.0;
        for beta in 0..u.n_controls() {
            for i in 0..u.n_intervals() {
                let a = u.node(i, beta);
                let b = u.node(i + 1, beta);
                acc += h / 3.0 * (a * a + a * b + b * b);
            }
        }
        self.alpha * acc
    }

    /// ∇(α·Σ∫u²) = 2αMu blockwise, with M the exact tridiagonal mass matrix.
    pub fn regularizer_gradient(&self, u: &ControlField) -> DVector<f64> {
        let h = u.dt();
        let n = u.n_intervals();
        let mut g = DVector::zeros(u.n_controls() * (n + 1));
        for beta in 0..u.n_controls() {
            for i in 0..=n {
                let mut acc = 0.0;
                // (Mu)_i with M = (h/6)·tridiag(1,4,1), halved at the ends.
                let diag = if i == 0 || i == n { h / 3.0 } else { 2.0 * h / 3.0 };
                acc += diag * u.node(i, beta);
                if i > 0 {
                    acc += h / 6.0 * u.node(i - 1, beta);
                }
                if i < n {
                    acc += h / 6.0 * u.node(i + 1, beta);
                }
                g[beta * (n + 1) + i] = 2.0 * self.alpha * acc;
            }
        }
        g
    }

    /// Spectral norm of the regularizer Hessian 2αM (exact small eigensolve).
    pub fn regularizer_curvature(&self) -> f64 {
        let n = self.n_intervals;
        let h = self.horizon / n as f64;
        let mut m = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..=n {
            m[(i, i)] = if i == 0 || i == n { h / 3.0 } else { 2.0 * h / 3.0 };
            if i < n {
                m[(i, i + 1)] = h / 6.0;
                m[(i + 1, i)] = h / 6.0;
            }
        }
        let eig = m.symmetric_eigen();
        2.0 * self.alpha * eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
    }

    /// F(u) = s·tr(𝒪ρ(T)) + α·Σ∫u². Never noisy.
    pub fn value(&self, u: &ControlField) -> Result<f64> {
        Ok(self.sign() * self.evaluate_j1(u)? + self.regularizer(u))
    }

    pub fn value_at(&self, x: &DVector<f64>) -> Result<f64> {
        self.value(&self.control_from(x)?)
    }

    /// Central finite-difference gradient of F at `u` (exact regularizer part,
    /// stencil order `2m` on the expectation part, step `h`). All simulator calls
    /// run in parallel; the reduction order is fixed, so results are deterministic.
    pub fn fd_gradient(&self, u: &ControlField, m: usize, h: f64) -> Result<DVector<f64>> {
        if !(m == 1 || m == 2) {
            return Err(CoreError::InvalidParams("stencil half-width must be 1 or 2".into()));
        }
        if !(h > 0.0) {
            return Err(CoreError::InvalidParams("finite-difference step must be positive".into()));
        }
        let coeffs = stencil_coefficients(m);
        let x = u.to_dvector();
        let dim = x.len();

        // Evaluation schedule: (coordinate, shift index) → J1(x + shift·e_i).
        let mut shifts = Vec::with_capacity(2 * m);
        for k in 1..=m {
            shifts.push(k as f64 * h);
            shifts.push(-(k as f64) * h);
        }
        let evals: Vec<f64> = (0..dim * shifts.len())
            .into_par_iter()
            .map(|flat| {
                let i = flat / shifts.len();
                let s = shifts[flat % shifts.len()];
                let mut xs = x.clone();
                xs[i] += s;
                let us = u.with_coords(&xs)?;
                self.evaluate_j1(&us)
            })
            .collect::<Result<Vec<f64>>>()?;

        let mut g = self.regularizer_gradient(u);
        let sign = self.sign();
        for i in 0..dim {
            let mut acc = 0.0;
            for (k_idx, &c) in coeffs.iter().enumerate() {
                let plus = evals[i * shifts.len() + 2 * k_idx];
                let minus = evals[i * shifts.len() + 2 * k_idx + 1];
                acc += c * (plus - minus);
            }
            g[i] += sign * acc / h;
        }
        Ok(g)
    }

    /// Default finite-difference step: `1e-3·max(1, ‖u‖_∞)`.
    pub fn default_fd_step(u: &ControlField) -> f64 {
        let sup = u.nodes().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        1e-3 * sup.max(1.0)
    }

    /// Smoothness constants of F on the control grid:
    /// gradient Lipschitz `ℓ = 6(N+1)δt²‖μ‖²‖𝒪‖ + 2α‖M‖` and
    /// Hessian Lipschitz `ϱ = 24(N+1)δt³‖μ‖³‖𝒪‖`.
    pub fn lipschitz_constants(&self) -> (f64, f64) {
        let n = self.n_intervals;
        let dt = self.horizon / n as f64;
        let mu_norm = self
            .model
            .mu
            .iter()
            .map(linalg::spectral_norm)
            .fold(0.0f64, f64::max);
        let o_norm = self.observable.norm();
        let ell = 6.0 * (n as f64 + 1.0) * dt * dt * mu_norm * mu_norm * o_norm
            + self.regularizer_curvature();
        let rho = 24.0 * (n as f64 + 1.0) * dt.powi(3) * mu_norm.powi(3) * o_norm;
        (ell, rho)
    }

    /// Bound on k-th order directional derivatives of tr(𝒪ρ(T)) along control
    /// coordinates: `(k+1)!·δt^k·‖μ‖^k·‖𝒪‖`.
    pub fn derivative_bound(&self, k: usize) -> f64 {
        let dt = self.horizon / self.n_intervals as f64;
        let mu_norm = self
            .model
            .mu
            .iter()
            .map(linalg::spectral_norm)
            .fold(0.0f64, f64::max);
        let fact: f64 = (1..=(k + 1)).map(|i| i as f64).product();
        fact * dt.powi(k as i32) * mu_norm.powi(k as i32) * self.observable.norm()
    }
}

/// `c_k = (−1)^{k+1}(m!)²/(k·(m−k)!·(m+k)!)`, k = 1..m.
pub fn stencil_coefficients(m: usize) -> Vec<f64> {
    let fact = |n: usize| -> f64 { (1..=n).map(|i| i as f64).product() };
    (1..=m)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * fact(m) * fact(m) / (k as f64 * fact(m - k) * fact(m + k))
        })
        .collect()
}

/// How gradients are perturbed before being handed to the optimizer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    None,
    /// Uniform direction, uniform magnitude in `[0, ε_g]`.
    Spherical,
    /// `−ε_g·∇/‖∇‖`: shrinks the gradient along itself (worst case for
    /// small-gradient termination).
    Adversarial,
}

/// Configuration of the noisy gradient oracle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GradientOracleConfig {
    /// Stencil half-width m (order-2m accuracy): 1 or 2.
    pub order: usize,
    /// Finite-difference step; `None` → `1e-3·max(1, ‖u‖_∞)` per call.
    pub fd_step: Option<f64>,
    pub noise: NoiseMode,
    /// Noise bound ε_g ≥ ‖injected error‖.
    pub eps_g: f64,
    pub seed: u64,
}

impl GradientOracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.order == 1 || self.order == 2) {
            return Err(CoreError::InvalidParams("oracle order must be 1 or 2".into()));
        }
        if !(self.eps_g >= 0.0) {
            return Err(CoreError::InvalidParams("eps_g must be nonnegative".into()));
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0) {
                return Err(CoreError::InvalidParams("fd_step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One gradient query: the perturbed gradient handed to the optimizer, the
/// unperturbed finite-difference gradient, and the injected error norm.
#[derive(Clone, Debug)]
pub struct GradientSample {
    pub noisy: DVector<f64>,
    pub true_fd: DVector<f64>,
    pub noise_norm: f64,
}

/// Noisy gradient at `u`. `call_idx` selects the noise stream: the same
/// `(seed, call_idx)` always reproduces the same draw, independent of call order.
pub fn noisy_gradient(
    cfg: &ObjectiveConfig,
    ocfg: &GradientOracleConfig,
    u: &ControlField,
    call_idx: u64,
) -> Result<GradientSample> {
    ocfg.validate()?;
    let h = ocfg.fd_step.unwrap_or_else(|| ObjectiveConfig::default_fd_step(u));
    let true_fd = cfg.fd_gradient(u, ocfg.order, h)?;
    let dim = true_fd.len();

    let noise: DVector<f64> = match ocfg.noise {
        NoiseMode::None => DVector::zeros(dim),
        NoiseMode::Spherical => {
            let mut rng = ChaCha8Rng::seed_from_u64(ocfg.seed);
            rng.set_stream(call_idx);
            let mut dir = DVector::from_fn(dim, |_, _| standard_normal(&mut rng));
            let n = dir.norm();
            if n > 0.0 {
                dir /= n;
            }
            let mag: f64 = rng.gen_range(0.0..=ocfg.eps_g.max(f64::MIN_POSITIVE));
            dir * mag.min(ocfg.eps_g)
        }
        NoiseMode::Adversarial => {
            let n = true_fd.norm();
            if n > 0.0 {
                &true_fd * (-ocfg.eps_g.min(n) / n)
            } else {
                DVector::zeros(dim)
            }
        }
    };
    let noise_norm = noise.norm();
    let noisy = &true_fd + &noise;
    Ok(GradientSample { noisy, true_fd, noise_norm })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller from two uniform draws; good enough for noise directions.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
