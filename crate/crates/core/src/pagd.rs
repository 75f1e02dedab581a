//! Perturbed accelerated gradient descent with bounded gradient error.
//!
//! Minimizes a smooth nonconvex `f` given only a noisy gradient oracle
//! (‖∇̂f − ∇f‖ ≤ ε_g) and noiseless function values, following the accelerated
//! scheme of Jin, Netrapalli and Jordan ("Accelerated gradient descent escapes
//! saddle points faster than gradient descent", COLT 2018) with three ingredients:
//!
//! 1. an accelerated (heavy-ball) step `y = x + (1−θ)v`, `x' = y − η∇̂f(y)`;
//! 2. a negative-curvature exploitation (NCE) reset when `f` dips below its
//!    first-order model by margin `(γ/2)‖x−y‖²` between `x` and `y`;
//! 3. a uniform ball perturbation of radius `r` when the gradient is small and no
//!    perturbation happened in the last 𝒯 steps, which escapes strict saddles.
//!
//! The run halts with a certificate once the observed gradient norm stays at or
//! below `ε − ε_g` for 𝒯 consecutive iterations — under the noise bound this pins
//! the true gradient below ε — or when the iteration budget `k_max` is exhausted.
//!
//! All hyperparameters derive from the problem constants `(ℓ, ϱ, ε, δ, Δf, d)`
//! through [`PagdParams::derive`]; the derivation is recorded verbatim in the
//! struct so runs can be reproduced from the reported parameter ledger alone.

use crate::error::{CoreError, Result};
use crate::objective::{noisy_gradient, GradientOracleConfig, GradientSample, ObjectiveConfig};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Minimization target seen through a noisy gradient oracle.
///
/// `value` is exact (noiseless); `gradient` may carry bounded error and reports
/// both the perturbed vector handed to the optimizer and the unperturbed one (the
/// latter is used for nothing but diagnostics and certificates).
pub trait ObjectiveOracle {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&mut self, x: &DVector<f64>) -> Result<GradientSample>;
}

/// Bridges the control objective to the optimizer: values are noiseless
/// evaluations of the regularized objective at coordinate vectors, gradients are
/// finite-difference estimates with the configured noise model, each call drawing
/// from its own counter-indexed stream (so a run is reproducible from the seed
/// and the counters alone, regardless of evaluation order).
pub struct ControlOracle<'a> {
    objective: &'a ObjectiveConfig,
    gradient_cfg: &'a GradientOracleConfig,
    /// Gradient calls made so far (also the next call's stream index).
    pub grad_calls: u64,
    /// Function-value calls made so far.
    pub value_calls: u64,
}

impl<'a> ControlOracle<'a> {
    pub fn new(objective: &'a ObjectiveConfig, gradient_cfg: &'a GradientOracleConfig) -> Self {
        Self { objective, gradient_cfg, grad_calls: 0, value_calls: 0 }
    }
}

impl ObjectiveOracle for ControlOracle<'_> {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64> {
        self.value_calls += 1;
        self.objective.value_at(x)
    }

    fn gradient(&mut self, x: &DVector<f64>) -> Result<GradientSample> {
        let u = self.objective.control_from(x)?;
        let sample = noisy_gradient(self.objective, self.gradient_cfg, &u, self.grad_calls)?;
        self.grad_calls += 1;
        Ok(sample)
    }
}

/// Full hyperparameter ledger. Everything below `chi` is derived; the struct is
/// serialized into run artifacts so a report shows the exact numbers used.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PagdParams {
    /// Gradient Lipschitz constant ℓ.
    pub ell: f64,
    /// Hessian Lipschitz constant ϱ.
    pub rho: f64,
    /// Target gradient accuracy ε.
    pub epsilon: f64,
    /// Failure probability budget δ.
    pub delta: f64,
    /// Upper bound Δf on f(x₀) − min f.
    pub delta_f: f64,
    /// Problem dimension d.
    pub dim: usize,
    /// Assumed oracle noise bound ε_g (0 for a clean oracle).
    pub eps_g: f64,
    /// Log factor χ = max(1, ln(dℓΔf/(ϱεδ))) unless overridden.
    pub chi: f64,
    /// Absolute constant c (4 unless overridden).
    pub c: f64,

    /// κ = ℓ/√(ϱε) — the condition number of the escape analysis.
    pub kappa: f64,
    /// Step size η = 1/(4ℓ).
    pub eta: f64,
    /// Momentum parameter θ = 1/(4√κ).
    pub theta: f64,
    /// NCE curvature threshold γ = θ²/η.
    pub gamma: f64,
    /// NCE probe length s = γ/(4ϱ).
    pub s: f64,
    /// Steps-per-round 𝒯 = √κ·χ·c (float; the loop uses ⌈𝒯⌉).
    pub t_round: f64,
    /// Per-round energy drop ℰ = √(ε³/ϱ)·χ⁻⁵·c⁻⁷.
    pub escape_energy: f64,
    /// Momentum ceiling 𝒮 = √(2η𝒯ℰ/θ).
    pub momentum_ceiling: f64,
    /// Locality radius ℳ = (ε√κ/ℓ)·c⁻¹.
    pub locality: f64,
    /// Perturbation radius r = ηε·χ⁻⁵·c⁻⁸.
    pub r: f64,
    /// Largest noise bound under which the first-order guarantee survives.
    pub eps_g_first_order: f64,
    /// Largest noise bound under which the escape (second-order) guarantee survives.
    pub eps_g_second_order: f64,
    /// Iteration budget k_max = ⌈c·ℓ^{1/2}·ϱ^{1/4}·Δf·χ⁶/ε^{7/4}⌉.
    pub k_max: usize,
}

impl PagdParams {
    /// Derive every hyperparameter from the problem constants.
    ///
    /// `chi_override`/`c` replace the defaults χ = max(1, ln(dℓΔf/(ϱεδ))), c = 4.
    /// Requires ε ≤ ℓ²/ϱ (so κ ≥ 1), positive constants, and δ ∈ (0, 1).
    #[allow(clippy::too_many_arguments)]
    pub fn derive(
        ell: f64,
        rho: f64,
        epsilon: f64,
        delta: f64,
        delta_f: f64,
        dim: usize,
        eps_g: f64,
        chi_override: Option<f64>,
        c: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("ell", ell),
            ("rho", rho),
            ("epsilon", epsilon),
            ("delta_f", delta_f),
            ("c", c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(CoreError::InvalidParams(format!("delta must lie in (0,1), got {delta}")));
        }
        if dim == 0 {
            return Err(CoreError::InvalidParams("dimension must be at least 1".into()));
        }
        if !(eps_g >= 0.0 && eps_g.is_finite()) {
            return Err(CoreError::InvalidParams("eps_g must be nonnegative".into()));
        }
        if epsilon > ell * ell / rho * (1.0 + 1e-12) {
            return Err(CoreError::InvalidParams(format!(
                "epsilon = {epsilon} exceeds ℓ²/ϱ = {}; the analysis needs κ = ℓ/√(ϱε) ≥ 1",
                ell * ell / rho
            )));
        }

        let chi = chi_override
            .unwrap_or_else(|| (dim as f64 * ell * delta_f / (rho * epsilon * delta)).ln().max(1.0));
        if !(chi >= 1.0) {
            return Err(CoreError::InvalidParams(format!("chi must be ≥ 1, got {chi}")));
        }

        let kappa = ell / (rho * epsilon).sqrt();
        let eta = 1.0 / (4.0 * ell);
        let theta = 1.0 / (4.0 * kappa.sqrt());
        let gamma = theta * theta / eta;
        let s = gamma / (4.0 * rho);
        let t_round = kappa.sqrt() * chi * c;
        let escape_energy = (epsilon.powi(3) / rho).sqrt() * chi.powi(-5) * c.powi(-7);
        let momentum_ceiling = (2.0 * eta * t_round * escape_energy / theta).sqrt();
        let locality = epsilon * kappa.sqrt() / ell / c;
        let r = eta * epsilon * chi.powi(-5) * c.powi(-8);
        let eps_g_first_order = rho.powf(0.125) * epsilon.powf(1.125)
            / (2.0f64.sqrt() * ell.powf(0.25) * chi.powf(1.5) * c.powf(1.5));
        let eps_g_second_order = delta * epsilon.powi(3)
            / (64.0 * ell * chi.powi(11) * c.powi(16) * (dim as f64).sqrt() * delta_f);
        let k_max = (c * ell.sqrt() * rho.powf(0.25) * delta_f * chi.powi(6)
            / epsilon.powf(1.75))
        .ceil() as usize;

        Ok(Self {
            ell,
            rho,
            epsilon,
            delta,
            delta_f,
            dim,
            eps_g,
            chi,
            c,
            kappa,
            eta,
            theta,
            gamma,
            s,
            t_round,
            escape_energy,
            momentum_ceiling,
            locality,
            r,
            eps_g_first_order,
            eps_g_second_order,
            k_max,
        })
    }

    /// ⌈𝒯⌉: the perturbation cool-down and the termination streak length.
    pub fn t_steps(&self) -> usize {
        self.t_round.ceil().max(1.0) as usize
    }

    /// The Hamiltonian energy E = f(x) + ‖v‖²/(2η) that the method descends.
    pub fn energy(&self, f_x: f64, v: &DVector<f64>) -> f64 {
        f_x + v.norm_squared() / (2.0 * self.eta)
    }
}

/// What happened in one iteration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum StepEvent {
    /// Plain accelerated step.
    Agd,
    /// Ball perturbation was added to x this iteration (before the step).
    Perturbed,
    /// NCE with ‖v‖ ≥ s: momentum reset, x kept.
    NceReset,
    /// NCE with ‖v‖ < s: picked the lower of x ± s·v̂, momentum reset.
    NceLine,
}

impl std::fmt::Display for StepEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StepEvent::Agd => "agd",
            StepEvent::Perturbed => "perturbed",
            StepEvent::NceReset => "nce-reset",
            StepEvent::NceLine => "nce-line",
        };
        f.write_str(s)
    }
}

/// Everything measured in one iteration (one CSV row in run artifacts).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub event: StepEvent,
    /// f(x_t), noiseless.
    pub f_x: f64,
    /// ‖∇̂f(x_t)‖ — what the termination test sees.
    pub grad_x_noisy_norm: f64,
    /// ‖∇f(x_t)‖ up to finite-difference error (no injected noise).
    pub grad_x_true_norm: f64,
    /// Injected error norm at x_t.
    pub noise_x_norm: f64,
    /// E_t = f(x_t) + ‖v_t‖²/(2η), recorded before any perturbation.
    pub energy: f64,
    /// ‖v_t‖².
    pub v_norm_sq: f64,
    /// ‖∇̂f(y_t)‖ for the update actually taken.
    pub grad_y_noisy_norm: f64,
    /// ‖∇f(y_t)‖ (unperturbed estimate).
    pub grad_y_true_norm: f64,
    /// Injected error norm at y_t.
    pub noise_y_norm: f64,
    /// ‖x_{t+1} − x_t‖².
    pub x_step_norm_sq: f64,
}

/// Optimizer state exposed so callers can drive or resume runs themselves.
#[derive(Clone, Debug)]
pub struct PagdState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub iter: usize,
    pub last_perturb: Option<usize>,
}

impl PagdState {
    pub fn new(x0: DVector<f64>) -> Self {
        let v = DVector::zeros(x0.len());
        Self { x: x0, v, iter: 0, last_perturb: None }
    }

    /// Iterations since the last perturbation (`u64::MAX` if none happened).
    pub fn steps_since_perturb(&self) -> u64 {
        match self.last_perturb {
            Some(t) => (self.iter - t) as u64,
            None => u64::MAX,
        }
    }

    /// Add a uniform draw from the radius-`r` ball to x. Fails if the previous
    /// perturbation is fewer than 𝒯 steps old — perturbing more often voids the
    /// escape analysis, so the cool-down is enforced here.
    pub fn perturb(&mut self, params: &PagdParams, rng: &mut ChaCha8Rng) -> Result<()> {
        let elapsed = self.steps_since_perturb();
        let period = params.t_steps() as u64;
        if elapsed <= period {
            return Err(CoreError::PerturbationTooSoon { elapsed, period });
        }
        let d = self.x.len();
        let mut dir = DVector::from_fn(d, |_, _| standard_normal(rng));
        let n = dir.norm();
        if n > 0.0 {
            dir /= n;
        }
        let radius = params.r * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
        self.x += dir * radius;
        self.last_perturb = Some(self.iter);
        Ok(())
    }
}

/// Momentum look-ahead point y = x + (1−θ)v.
pub fn momentum_point(params: &PagdParams, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    x + v * (1.0 - params.theta)
}

/// Accelerated update from the gradient at y: x' = y − η∇̂f(y), v' = x' − x.
pub fn agd_step(
    params: &PagdParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
    grad_y: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let x_next = y - grad_y * params.eta;
    let v_next = &x_next - x;
    (x_next, v_next)
}

/// Negative-curvature certificate between x and y:
/// f(x) ≤ f(y) + ⟨∇̂f(y), x−y⟩ − (γ/2)‖x−y‖², skipped when x = y exactly.
pub fn nce_condition(
    params: &PagdParams,
    f_x: f64,
    f_y: f64,
    grad_y: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> bool {
    let diff = x - y;
    let dist_sq = diff.norm_squared();
    if dist_sq == 0.0 {
        return false;
    }
    f_x <= f_y + grad_y.dot(&diff) - 0.5 * params.gamma * dist_sq
}

/// Exploit detected negative curvature: with large momentum just reset it; with
/// small momentum probe x ± s·v̂ and keep the lower value. Either way v' = 0.
pub fn nce_step<O: ObjectiveOracle>(
    oracle: &mut O,
    params: &PagdParams,
    x: &DVector<f64>,
    v: &DVector<f64>,
    f_x: f64,
) -> Result<(DVector<f64>, StepEvent)> {
    let v_norm = v.norm();
    if v_norm >= params.s || v_norm == 0.0 {
        // Large momentum already moved us; or no direction to probe.
        return Ok((x.clone(), StepEvent::NceReset));
    }
    let dir = v / v_norm;
    let x_plus = x + &dir * params.s;
    let x_minus = x - &dir * params.s;
    let f_plus = oracle.value(&x_plus)?;
    let f_minus = oracle.value(&x_minus)?;
    let best = if f_plus <= f_minus { &x_plus } else { &x_minus };
    if f_plus.min(f_minus) <= f_x {
        Ok((best.clone(), StepEvent::NceLine))
    } else {
        Ok((x.clone(), StepEvent::NceLine))
    }
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// ‖∇̂f‖ ≤ ε − ε_g held for 𝒯 consecutive iterations.
    GradientCertified,
    /// Iteration budget k_max exhausted.
    Budget,
}

#[derive(Clone, Debug)]
pub struct PagdResult {
    pub best_x: DVector<f64>,
    pub best_f: f64,
    /// Noisy gradient norm at the best iterate (the selection criterion).
    pub best_grad_norm: f64,
    pub best_iter: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRecord>,
}

/// The lowest observed-gradient-norm iterate seen so far.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BestIterate {
    pub grad_norm: f64,
    pub f: f64,
    pub iter: usize,
    pub x: Vec<f64>,
}

/// Value-semantic snapshot of a paused run: everything a fresh process needs to
/// continue it bit-for-bit. The perturbation RNG is captured as a stream position
/// (the generator is recreated from the run seed and fast-forwarded); gradient
/// noise is counter-based inside the oracle, so callers persist their own call
/// counters alongside this.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PagdSnapshot {
    /// Next iteration index to execute.
    pub iter: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub last_perturb: Option<usize>,
    /// Length of the current consecutive small-gradient streak.
    pub streak: usize,
    pub best: Option<BestIterate>,
    /// ChaCha word position of the perturbation RNG, split (hi, lo).
    pub rng_word_pos: (u64, u64),
}

/// Single-step optimizer driver: a strictly sequential state machine whose
/// snapshots are plain values, so callers can checkpoint, resume, or observe a
/// run between any two iterations. [`run`] is the all-at-once wrapper.
pub struct PagdDriver<'a, O: ObjectiveOracle> {
    oracle: &'a mut O,
    params: PagdParams,
    state: PagdState,
    rng: ChaCha8Rng,
    streak: usize,
    best: Option<BestIterate>,
    trace: Vec<TraceRecord>,
    done: Option<Termination>,
}

impl<'a, O: ObjectiveOracle> PagdDriver<'a, O> {
    pub fn new(
        oracle: &'a mut O,
        params: &PagdParams,
        x0: &DVector<f64>,
        seed: u64,
    ) -> Result<Self> {
        if params.k_max == 0 {
            return Err(CoreError::InvalidParams("k_max = 0 leaves nothing to optimize".into()));
        }
        if x0.is_empty() {
            return Err(CoreError::InvalidParams("starting point must be nonempty".into()));
        }
        Ok(Self {
            oracle,
            params: params.clone(),
            state: PagdState::new(x0.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            streak: 0,
            best: None,
            trace: Vec::new(),
            done: None,
        })
    }

    /// Rebuild a driver mid-run from a snapshot and the original run seed. The
    /// trace restarts empty (earlier records live wherever the caller wrote them).
    pub fn resume(
        oracle: &'a mut O,
        params: &PagdParams,
        seed: u64,
        snap: &PagdSnapshot,
    ) -> Result<Self> {
        if snap.x.is_empty() || snap.x.len() != snap.v.len() {
            return Err(CoreError::InvalidParams(format!(
                "snapshot x/v lengths {}/{} are unusable",
                snap.x.len(),
                snap.v.len()
            )));
        }
        if snap.iter >= params.k_max {
            return Err(CoreError::InvalidParams(format!(
                "snapshot iteration {} is at or past the budget {}",
                snap.iter, params.k_max
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hi, lo) = snap.rng_word_pos;
        rng.set_word_pos(((hi as u128) << 64) | lo as u128);
        Ok(Self {
            oracle,
            params: params.clone(),
            state: PagdState {
                x: DVector::from_vec(snap.x.clone()),
                v: DVector::from_vec(snap.v.clone()),
                iter: snap.iter,
                last_perturb: snap.last_perturb,
            },
            rng,
            streak: snap.streak,
            best: snap.best.clone(),
            trace: Vec::new(),
            done: None,
        })
    }

    pub fn snapshot(&self) -> PagdSnapshot {
        let pos = self.rng.get_word_pos();
        PagdSnapshot {
            iter: self.state.iter,
            x: self.state.x.iter().copied().collect(),
            v: self.state.v.iter().copied().collect(),
            last_perturb: self.state.last_perturb,
            streak: self.streak,
            best: self.best.clone(),
            rng_word_pos: ((pos >> 64) as u64, pos as u64),
        }
    }

    pub fn state(&self) -> &PagdState {
        &self.state
    }

    pub fn oracle(&self) -> &O {
        self.oracle
    }

    pub fn params(&self) -> &PagdParams {
        &self.params
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn termination(&self) -> Option<Termination> {
        self.done
    }

    /// Execute one iteration. Returns the termination cause once the run is over
    /// (further calls keep returning it without touching the oracle).
    pub fn step(&mut self) -> Result<Option<Termination>> {
        if let Some(term) = self.done {
            return Ok(Some(term));
        }
        let params = &self.params;
        let state = &mut self.state;
        let t = state.iter;
        let t_steps = params.t_steps();
        let halt_threshold = (params.epsilon - params.eps_g).max(0.0);

        let grad_x = self.oracle.gradient(&state.x)?;
        let f_x = self.oracle.value(&state.x)?;
        let noisy_norm = grad_x.noisy.norm();
        let energy = params.energy(f_x, &state.v);

        // Termination: 𝒯 consecutive small observed gradients certify that the
        // true gradient norm never exceeded ε in that window.
        self.streak = if noisy_norm <= halt_threshold { self.streak + 1 } else { 0 };

        // Track the best iterate by observed gradient norm.
        if self.best.as_ref().map(|b| noisy_norm < b.grad_norm).unwrap_or(true) {
            self.best = Some(BestIterate {
                grad_norm: noisy_norm,
                f: f_x,
                iter: t,
                x: state.x.iter().copied().collect(),
            });
        }

        let mut event = StepEvent::Agd;
        if noisy_norm <= params.epsilon && state.steps_since_perturb() > t_steps as u64 {
            state.perturb(params, &mut self.rng)?;
            event = StepEvent::Perturbed;
        }

        let x_t = state.x.clone();
        let v_t = state.v.clone();
        let f_x_post =
            if event == StepEvent::Perturbed { self.oracle.value(&state.x)? } else { f_x };

        let y = momentum_point(params, &state.x, &state.v);
        let grad_y = self.oracle.gradient(&y)?;
        let f_y = self.oracle.value(&y)?;

        let (x_next, v_next) =
            if nce_condition(params, f_x_post, f_y, &grad_y.noisy, &state.x, &y) {
                let (x_next, nce_event) =
                    nce_step(self.oracle, params, &state.x, &state.v, f_x_post)?;
                if event != StepEvent::Perturbed {
                    event = nce_event;
                }
                (x_next, DVector::zeros(state.x.len()))
            } else {
                agd_step(params, &state.x, &y, &grad_y.noisy)
            };

        self.trace.push(TraceRecord {
            iter: t,
            event,
            f_x,
            grad_x_noisy_norm: noisy_norm,
            grad_x_true_norm: grad_x.true_fd.norm(),
            noise_x_norm: grad_x.noise_norm,
            energy,
            v_norm_sq: v_t.norm_squared(),
            grad_y_noisy_norm: grad_y.noisy.norm(),
            grad_y_true_norm: grad_y.true_fd.norm(),
            noise_y_norm: grad_y.noise_norm,
            x_step_norm_sq: (&x_next - &x_t).norm_squared(),
        });

        state.x = x_next;
        state.v = v_next;
        state.iter = t + 1;

        if self.streak >= t_steps {
            self.done = Some(Termination::GradientCertified);
        } else if state.iter >= params.k_max {
            self.done = Some(Termination::Budget);
        }
        Ok(self.done)
    }

    /// Consume the driver into a result. Errors if the run has not terminated.
    pub fn finish(self) -> Result<PagdResult> {
        let termination = self.done.ok_or_else(|| {
            CoreError::InvalidParams("the run has not terminated; keep stepping".into())
        })?;
        let best = self
            .best
            .ok_or_else(|| CoreError::InvalidParams("no iterations were recorded".into()))?;
        Ok(PagdResult {
            best_x: DVector::from_vec(best.x),
            best_f: best.f,
            best_grad_norm: best.grad_norm,
            best_iter: best.iter,
            iterations: self.state.iter,
            termination,
            trace: self.trace,
        })
    }
}

/// Run the optimizer from `x0` until certification or budget exhaustion.
///
/// The RNG (seeded from `seed`) is consumed by perturbation draws only; gradient
/// noise lives inside the oracle with its own counter-based streams.
pub fn run<O: ObjectiveOracle>(
    oracle: &mut O,
    params: &PagdParams,
    x0: &DVector<f64>,
    seed: u64,
) -> Result<PagdResult> {
    let mut driver = PagdDriver::new(oracle, params, x0, seed)?;
    while driver.step()?.is_none() {}
    driver.finish()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Outcome of the approximate second-order stationarity check at a point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecondOrderReport {
    /// ‖∇f‖ without injected noise (finite-difference accuracy).
    pub grad_norm: f64,
    /// Smallest eigenvalue of the finite-difference Hessian.
    pub min_eigenvalue: f64,
    /// Curvature tolerance −√(ϱε).
    pub curvature_floor: f64,
    pub grad_ok: bool,
    pub curvature_ok: bool,
}

impl SecondOrderReport {
    pub fn passed(&self) -> bool {
        self.grad_ok && self.curvature_ok
    }
}

/// Verify ‖∇f(x)‖ ≤ ε and λ_min(∇²f(x)) ≥ −√(ϱε) from function values alone.
///
/// The Hessian entry (i,j) is the 4-point central difference
/// `[f(x+h·eᵢ+h·eⱼ) − f(x+h·eᵢ−h·eⱼ) − f(x−h·eᵢ+h·eⱼ) + f(x−h·eᵢ−h·eⱼ)]/(4h²)`
/// (2d(d+1) evaluations); the matrix is symmetrized and diagonalized exactly.
pub fn check_second_order<O: ObjectiveOracle>(
    oracle: &mut O,
    params: &PagdParams,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<SecondOrderReport> {
    if !(fd_step > 0.0) {
        return Err(CoreError::InvalidParams("fd_step must be positive".into()));
    }
    let d = x.len();
    let grad = oracle.gradient(x)?;
    let grad_norm = grad.true_fd.norm();

    let mut hess = nalgebra::DMatrix::<f64>::zeros(d, d);
    let h = fd_step;
    for i in 0..d {
        for j in i..d {
            let mut probe = |si: f64, sj: f64| -> Result<f64> {
                let mut xp = x.clone();
                xp[i] += si * h;
                xp[j] += sj * h;
                oracle.value(&xp)
            };
            let val = (probe(1.0, 1.0)? - probe(1.0, -1.0)? - probe(-1.0, 1.0)?
                + probe(-1.0, -1.0)?)
                / (4.0 * h * h);
            hess[(i, j)] = val;
            hess[(j, i)] = val;
        }
    }
    let eig = hess.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let curvature_floor = -(params.rho * params.epsilon).sqrt();
    Ok(SecondOrderReport {
        grad_norm,
        min_eigenvalue,
        curvature_floor,
        grad_ok: grad_norm <= params.epsilon,
        curvature_ok: min_eigenvalue >= curvature_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Exact-gradient quadratic oracle f(x) = ½xᵀDx with diagonal D.
    struct Quadratic {
        d: Vec<f64>,
    }

    impl ObjectiveOracle for Quadratic {
        fn value(&mut self, x: &DVector<f64>) -> Result<f64> {
            Ok(0.5 * x.iter().zip(&self.d).map(|(xi, di)| di * xi * xi).sum::<f64>())
        }

        fn gradient(&mut self, x: &DVector<f64>) -> Result<GradientSample> {
            let g = DVector::from_iterator(x.len(), x.iter().zip(&self.d).map(|(xi, di)| di * xi));
            Ok(GradientSample { noisy: g.clone(), true_fd: g, noise_norm: 0.0 })
        }
    }

    fn test_params() -> PagdParams {
        PagdParams::derive(2.0, 1.0, 0.16, 0.05, 1.0, 10, 0.0, None, 4.0).unwrap()
    }

    #[test]
    fn derived_constants_match_hand_computation() {
        let p = test_params();
        assert_abs_diff_eq!(p.kappa, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eta, 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(p.theta, 1.0 / (4.0 * 5.0f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(p.gamma, p.theta * p.theta / p.eta, epsilon = 1e-15);
        assert_abs_diff_eq!(p.s, p.gamma / 4.0, epsilon = 1e-15);
        // χ = ln(dℓΔf/(ϱεδ)) = ln(10·2·1/(0.16·0.05)) = ln(2500).
        assert_abs_diff_eq!(p.chi, 2500.0f64.ln(), epsilon = 1e-12);
        assert_eq!(p.t_steps(), (5.0f64.sqrt() * p.chi * 4.0).ceil() as usize);
        assert!(p.eps_g_second_order < p.eps_g_first_order);
    }

    #[test]
    fn derive_rejects_epsilon_beyond_the_curvature_window() {
        // ε > ℓ²/ϱ ⟹ κ < 1.
        let err = PagdParams::derive(1.0, 1.0, 2.0, 0.05, 1.0, 4, 0.0, None, 4.0);
        assert!(matches!(err, Err(CoreError::InvalidParams(_))));
    }

    #[test]
    fn strongly_convex_quadratic_is_certified_quickly() {
        let mut oracle = Quadratic { d: vec![1.0, 0.5, 1.5] };
        let p = PagdParams::derive(2.0, 1.0, 0.05, 0.1, 10.0, 3, 0.0, Some(2.0), 2.0).unwrap();
        let x0 = DVector::from_vec(vec![2.0, -1.5, 1.0]);
        let out = run(&mut oracle, &p, &x0, 1).unwrap();
        assert_eq!(out.termination, Termination::GradientCertified);
        assert!(out.best_grad_norm <= p.epsilon);
        assert!(out.best_f < 0.01, "best value {}", out.best_f);
        // Energy never increases across unperturbed steps of a clean-oracle run
        // (a perturbation at step t injects energy that shows up in E_{t+1}).
        for w in out.trace.windows(2) {
            if w[0].event != StepEvent::Perturbed {
                assert!(w[1].energy <= w[0].energy + 1e-9, "{:?}", (w[0].energy, w[1].energy));
            }
        }
    }

    #[test]
    fn snapshot_resume_reproduces_the_uninterrupted_run() {
        let p = PagdParams::derive(2.0, 1.0, 0.05, 0.1, 10.0, 3, 0.0, Some(2.0), 2.0).unwrap();
        let x0 = DVector::from_vec(vec![2.0, -1.5, 1.0]);
        let mut oracle = Quadratic { d: vec![1.0, 0.5, 1.5] };
        let full = run(&mut oracle, &p, &x0, 1).unwrap();
        assert!(full.iterations > 5, "run too short to split at 5");

        let mut o1 = Quadratic { d: vec![1.0, 0.5, 1.5] };
        let mut driver = PagdDriver::new(&mut o1, &p, &x0, 1).unwrap();
        for _ in 0..5 {
            assert!(driver.step().unwrap().is_none());
        }
        let head: Vec<TraceRecord> = driver.trace().to_vec();
        // Round-trip the snapshot through JSON the way a resume file would.
        let snap0 = driver.snapshot();
        let json = serde_json::to_string(&snap0).unwrap();
        drop(driver);
        let snap: PagdSnapshot = serde_json::from_str(&json).unwrap();
        for (a, b) in snap0.x.iter().zip(&snap.x) {
            assert_eq!(a.to_bits(), b.to_bits(), "x bits changed in JSON round-trip");
        }
        for (a, b) in snap0.v.iter().zip(&snap.v) {
            assert_eq!(a.to_bits(), b.to_bits(), "v bits changed in JSON round-trip");
        }

        let mut o2 = Quadratic { d: vec![1.0, 0.5, 1.5] };
        let mut resumed = PagdDriver::resume(&mut o2, &p, 1, &snap).unwrap();
        while resumed.step().unwrap().is_none() {}
        let tail = resumed.finish().unwrap();

        assert_eq!(head.len() + tail.trace.len(), full.trace.len());
        for (i, (a, b)) in head.iter().chain(tail.trace.iter()).zip(&full.trace).enumerate() {
            assert_eq!(a.iter, b.iter, "iter at {i}");
            assert_eq!(a.event, b.event, "event at {i}");
            assert_eq!(a.f_x.to_bits(), b.f_x.to_bits(), "f_x at {i}");
            assert_eq!(
                a.grad_x_noisy_norm.to_bits(),
                b.grad_x_noisy_norm.to_bits(),
                "grad_x at {i}"
            );
            assert_eq!(a.energy.to_bits(), b.energy.to_bits(), "energy at {i}");
            assert_eq!(a.x_step_norm_sq.to_bits(), b.x_step_norm_sq.to_bits(), "step at {i}");
        }
        assert_eq!(tail.termination, full.termination);
        assert_eq!(tail.best_iter, full.best_iter);
        assert_eq!(tail.iterations, full.iterations);
        assert_eq!(tail.best_x, full.best_x);
    }

    #[test]
    fn energy_is_recomputable_from_the_trace() {
        let mut oracle = Quadratic { d: vec![1.0, 0.8] };
        let p = PagdParams::derive(2.0, 1.0, 0.05, 0.1, 10.0, 2, 0.0, Some(2.0), 2.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let out = run(&mut oracle, &p, &x0, 3).unwrap();
        for rec in &out.trace {
            let e = rec.f_x + rec.v_norm_sq / (2.0 * p.eta);
            assert_abs_diff_eq!(e, rec.energy, epsilon = 1e-10);
        }
    }

    #[test]
    fn perturbation_respects_the_cooldown() {
        let p = test_params();
        let mut st = PagdState::new(DVector::zeros(10));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Never perturbed: allowed.
        st.perturb(&p, &mut rng).unwrap();
        let before = st.x.clone();
        assert!(st.x.norm() > 0.0 && st.x.norm() <= p.r);
        // Immediately again: rejected with the elapsed/period diagnostic.
        st.iter += 1;
        let err = st.perturb(&p, &mut rng);
        match err {
            Err(CoreError::PerturbationTooSoon { elapsed, period }) => {
                assert_eq!(elapsed, 1);
                assert_eq!(period, p.t_steps() as u64);
            }
            other => panic!("expected PerturbationTooSoon, got {other:?}"),
        }
        assert_eq!(st.x, before);
        // After the cool-down: allowed again.
        st.iter += p.t_steps() + 1;
        st.perturb(&p, &mut rng).unwrap();
    }

    #[test]
    fn nce_condition_detects_a_quadratic_dip() {
        let p = test_params();
        // f(x) = −½x² along one axis: f(x) ≤ f(y) + g(y)(x−y) − (γ/2)(x−y)²
        // becomes −½x² ≤ −½y² − y(x−y) − (γ/2)(x−y)² ⇔ ½(x−y)² ≥ (γ/2)(x−y)²,
        // true whenever γ ≤ 1 and x ≠ y.
        let x = DVector::from_vec(vec![1.0]);
        let y = DVector::from_vec(vec![0.2]);
        let f = |z: &DVector<f64>| -0.5 * z[0] * z[0];
        let g = DVector::from_vec(vec![-y[0]]);
        assert!(nce_condition(&p, f(&x), f(&y), &g, &x, &y));
        assert!(!nce_condition(&p, f(&x), f(&x), &g, &x, &x), "exact tie must not trigger");
    }

    #[test]
    fn nce_step_probes_both_directions_with_small_momentum() {
        // Tilted saddle direction: moving −s along v̂ lowers f.
        struct Tilt;
        impl ObjectiveOracle for Tilt {
            fn value(&mut self, x: &DVector<f64>) -> Result<f64> {
                Ok(x[0])
            }
            fn gradient(&mut self, _x: &DVector<f64>) -> Result<GradientSample> {
                let g = DVector::from_vec(vec![1.0]);
                Ok(GradientSample { noisy: g.clone(), true_fd: g, noise_norm: 0.0 })
            }
        }
        let p = test_params();
        let x = DVector::from_vec(vec![0.0]);
        let v = DVector::from_vec(vec![p.s * 0.5]); // ‖v‖ < s: probe branch
        let (x_next, ev) = nce_step(&mut Tilt, &p, &x, &v, 0.0).unwrap();
        assert_eq!(ev, StepEvent::NceLine);
        assert_abs_diff_eq!(x_next[0], -p.s, epsilon = 1e-15);

        let v_big = DVector::from_vec(vec![2.0 * p.s]);
        let (x_keep, ev2) = nce_step(&mut Tilt, &p, &x, &v_big, 0.0).unwrap();
        assert_eq!(ev2, StepEvent::NceReset);
        assert_eq!(x_keep, x);
    }

    #[test]
    fn second_order_check_classifies_saddle_and_minimum() {
        let p = PagdParams::derive(2.0, 1.0, 0.16, 0.05, 1.0, 2, 0.0, None, 4.0).unwrap();
        // Minimum of a positive quadratic.
        let mut bowl = Quadratic { d: vec![1.0, 0.7] };
        let rep = check_second_order(&mut bowl, &p, &DVector::zeros(2), 1e-3).unwrap();
        assert!(rep.passed());
        assert_abs_diff_eq!(rep.min_eigenvalue, 0.7, epsilon = 1e-5);
        // Saddle with curvature −1 < −√(ϱε) = −0.4.
        let mut saddle = Quadratic { d: vec![1.0, -1.0] };
        let rep2 = check_second_order(&mut saddle, &p, &DVector::zeros(2), 1e-3).unwrap();
        assert!(rep2.grad_ok && !rep2.curvature_ok);
        assert_abs_diff_eq!(rep2.min_eigenvalue, -1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(rep2.curvature_floor, -0.4, epsilon = 1e-12);
    }
}
