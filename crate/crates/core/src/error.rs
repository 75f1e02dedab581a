//! Error type shared by all core modules.

use thiserror::Error;

/// Errors produced by model validation, simulation, and optimization.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A time argument fell outside the control horizon `[0, T]`.
    #[error("time {t} outside the control horizon [0, {horizon}]")]
    TimeOutOfDomain { t: f64, horizon: f64 },

    /// A matrix failed a structural check (shape, finiteness, Hermiticity, norm).
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// A model failed validation.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A control field failed validation.
    #[error("invalid control field: {0}")]
    InvalidControl(String),

    /// A density matrix failed validation.
    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    /// The Lindbladian vanishes identically, so the time rescaling is undefined.
    #[error("singular rescaling: the Lindbladian vanishes identically on [0, T]")]
    SingularRescaling,

    /// The implied series term count exceeds the configured cap.
    #[error("plan too large: ~10^{log10_terms:.1} series terms exceed the cap of {cap:.3e}")]
    PlanTooLarge { log10_terms: f64, cap: f64 },

    /// A simulation plan failed validation.
    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    /// Optimizer parameters failed a hypothesis check.
    #[error("invalid optimizer parameters: {0}")]
    InvalidParams(String),

    /// A perturbation was requested before the cooldown period elapsed.
    #[error("perturbation refused: {elapsed} steps since the last one, needs more than {period}")]
    PerturbationTooSoon { elapsed: u64, period: u64 },

    /// A numerical quantity became non-finite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A computed quantity exceeded a bound the mathematics guarantees.
    #[error("numerical bound violated: {0}")]
    BoundViolation(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
