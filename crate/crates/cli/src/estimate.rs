//! Reporting-only cost estimator: evaluates the closed-form query/gate
//! count formulas with unit constants. Nothing is executed.

use lindopt_core::model::{be_norm_l1, default_quad_cells};
use lindopt_core::{plan_from_epsilon, PagdParams, SimulationPlan};
use serde::Serialize;

use crate::config::ResolvedScenario;
use crate::error::{CliResult, Failure};

/// Predicted resource counts for a scenario. Query counts are oracle
/// invocations (Hamiltonian/jump block-encodings); gate counts add the
/// per-query circuit overhead. All formulas are evaluated with constant 1,
/// so only ratios and scalings are meaningful.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    /// ∫₀ᵀ (‖H(t)‖ + ½Σ‖L_j‖²) dt — the rescaled-clock length.
    pub be_l1: f64,
    pub horizon: f64,
    pub n_controls: usize,
    pub n_jumps: usize,
    /// ⌈log₂ dim⌉ system qubits.
    pub n_qubits: usize,
    pub dim: usize,
    /// Series plan (truncation orders, grid sizes, segments) at `eps_sim`.
    pub plan: SimulationPlan,
    pub eps_sim: f64,
    /// One-shot state-preparation query count: ‖ℒ‖·(log(‖ℒ‖/ε)/loglog)².
    pub simulation_queries: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_f: f64,
    /// Noise bound used for the per-iteration count: the configured ε_g if
    /// positive, otherwise the derived first-order tolerance.
    pub eps_g_used: f64,
    /// Gradient time discretization N = ⌈T^{3/2}/ε^{1/2}⌉.
    pub time_steps: u64,
    /// n_c·‖ℒ‖_{be,1}·T·Δf/ε^{23/8}.
    pub first_order_queries: f64,
    /// m·n·(first-order queries) + n·T^{3/2}·Δf/ε^{9/4}.
    pub first_order_gates: f64,
    /// n_c·‖ℒ‖_{be,1}·T^{7/4}·Δf/ε⁵.
    pub second_order_queries: f64,
    /// m·n·(second-order queries) + n·T^{3/2}·Δf/ε^{9/4}.
    pub second_order_gates: f64,
    /// The additive gate term counts classical arithmetic alongside quantum
    /// gates; the totals mix units and are reported verbatim.
    pub gate_units_caveat: bool,
    /// Iteration budget of the derived optimizer schedule.
    pub k_max: usize,
    /// Oracle queries per optimizer iteration: n_c·‖ℒ‖_{be,1}·T·ln(N/δ)/ε_g.
    pub per_iteration_queries: f64,
    /// Full derived hyperparameter ledger.
    pub params: PagdParams,
}

/// log(x)/loglog(x) with the inner log floored at 1, so the ratio is ≥ 1,
/// continuous, and nondecreasing in x even where the asymptotic form is
/// meaningless (x ≤ e^e).
fn log_ratio(x: f64) -> f64 {
    let lx = x.max(1.0).ln().max(1.0);
    lx / lx.ln().max(1.0)
}

pub fn estimate(scenario: &ResolvedScenario) -> CliResult<CostReport> {
    let opt = scenario
        .optimizer
        .as_ref()
        .ok_or_else(|| Failure::config("estimate needs an optimizer section in the scenario"))?;
    let obj = &scenario.objective;
    let t = obj.horizon;
    let n_c = scenario.initial_control.n_controls();
    let n_jumps = obj.model.jumps.len();
    let n_qubits = (obj.model.dim.max(2) as f64).log2().ceil() as usize;

    let quad = default_quad_cells(t);
    let be_l1 = be_norm_l1(&obj.model, &scenario.initial_control, quad)?;
    let plan = plan_from_epsilon(&obj.model, &scenario.initial_control, t, obj.eps_sim)?;
    let simulation_queries = be_l1 * log_ratio(be_l1 / obj.eps_sim).powi(2);

    let params = opt.pagd_params(obj)?;
    let eps = opt.epsilon;
    let eps_g_used = if opt.eps_g > 0.0 { opt.eps_g } else { params.eps_g_first_order };

    let time_steps = (t.powf(1.5) / eps.sqrt()).ceil() as u64;
    let first_order_queries = n_c as f64 * be_l1 * t * opt.delta_f / eps.powf(23.0 / 8.0);
    let additive_gates = n_qubits as f64 * t.powf(1.5) * opt.delta_f / eps.powf(9.0 / 4.0);
    let first_order_gates =
        (n_jumps * n_qubits) as f64 * first_order_queries + additive_gates;
    let second_order_queries = n_c as f64 * be_l1 * t.powf(7.0 / 4.0) * opt.delta_f / eps.powi(5);
    let second_order_gates =
        (n_jumps * n_qubits) as f64 * second_order_queries + additive_gates;
    let per_iteration_queries =
        n_c as f64 * be_l1 * t * (time_steps as f64 / opt.delta).ln() / eps_g_used;

    Ok(CostReport {
        be_l1,
        horizon: t,
        n_controls: n_c,
        n_jumps,
        n_qubits,
        dim: obj.model.dim,
        plan,
        eps_sim: obj.eps_sim,
        simulation_queries,
        epsilon: eps,
        delta: opt.delta,
        delta_f: opt.delta_f,
        eps_g_used,
        time_steps,
        first_order_queries,
        first_order_gates,
        second_order_queries,
        second_order_gates,
        gate_units_caveat: true,
        k_max: params.k_max,
        per_iteration_queries,
        params,
    })
}
