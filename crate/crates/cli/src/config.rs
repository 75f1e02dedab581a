//! Scenario configuration: the JSON schema users write, plus its resolution
//! into validated core types.
//!
//! A scenario file names a model file and describes the control grid, the
//! objective, the simulation accuracy/mode, and (optionally) the optimizer
//! and output directory. Relative paths are resolved against the directory
//! containing the scenario file.

use std::path::{Path, PathBuf};

use lindopt_core::linalg::mat_serde;
use lindopt_core::{
    CMatrix, ControlField, DensityState, GradientOracleConfig, LindbladModel, NoiseMode,
    ObjectiveConfig, Observable, PagdParams, SimMode,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Failure};

/// A complex matrix in the JSON wire format (rows of `[re, im]` pairs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixField(#[serde(with = "mat_serde")] pub CMatrix);

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Path to the model JSON file (`dim`, `h0`, `mu`, `jumps`).
    pub model: PathBuf,
    pub control: ControlSpec,
    pub objective: ObjectiveSpec,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

/// Control grid: `n_c` channels, `N` intervals over horizon `T`. Initial
/// nodal values default to the zero field.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub n_c: usize,
    #[serde(rename = "N")]
    pub n_intervals: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// `N+1` rows of `n_c` values each; omitted → all zeros.
    #[serde(default)]
    pub nodes: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Regularization weight α on Σ_β ∫|u_β|².
    pub alpha: f64,
    /// `true` (default): maximize tr(𝒪ρ(T)) − reg; `false`: minimize tr + reg.
    #[serde(default = "default_true")]
    pub maximize: bool,
    pub observable: MatrixField,
    pub rho0: StateSpec,
    /// Enforce ‖H₀‖, ‖μ_β‖, ‖L_j‖, ‖𝒪‖ ≤ 1 and α ≥ 2/T (default on).
    #[serde(default = "default_true")]
    pub normalized: bool,
}

/// Initial state: exactly one of `pure` (basis index) or `matrix`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default)]
    pub pure: Option<usize>,
    #[serde(default)]
    pub matrix: Option<MatrixField>,
}

/// Simulation accuracy and pipeline. `mode` is one of `"kraus"`,
/// `"oracle"` (with `steps`), or `"interaction"` (with `n_steps`).
/// (No `deny_unknown_fields` here: serde cannot combine it with `flatten`.)
#[derive(Debug, Clone, Deserialize)]
pub struct SimulationSpec {
    pub eps: f64,
    #[serde(flatten)]
    pub mode: SimMode,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    /// Target stationarity ε.
    pub epsilon: f64,
    /// Failure probability budget δ.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Objective gap bound Δf ≥ F(u₀) − min F.
    pub delta_f: f64,
    /// Gradient-noise bound ε_g (0 = clean oracle).
    #[serde(default)]
    pub eps_g: f64,
    /// Log-factor override; omitted → χ = max(1, ln(dℓΔf/(ϱεδ))).
    #[serde(default)]
    pub chi: Option<f64>,
    /// Absolute constant c.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_noise")]
    pub noise_mode: NoiseMode,
    /// Finite-difference stencil half-width: 1 or 2.
    #[serde(default = "default_fd_order")]
    pub fd_order: usize,
    /// Finite-difference step; omitted → 1e-3·max(1, ‖u‖_∞) per call.
    #[serde(default)]
    pub fd_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Override the analytic gradient-Lipschitz constant ℓ.
    #[serde(default)]
    pub ell: Option<f64>,
    /// Override the analytic Hessian-Lipschitz constant ϱ.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Hard cap on the iteration budget (min with the derived k_max).
    #[serde(default)]
    pub k_max_cap: Option<usize>,
    /// Write a checkpoint every this many iterations (0 = never).
    #[serde(default)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

fn default_true() -> bool {
    true
}
fn default_delta() -> f64 {
    0.05
}
fn default_c() -> f64 {
    4.0
}
fn default_noise() -> NoiseMode {
    NoiseMode::None
}
fn default_fd_order() -> usize {
    1
}

/// A scenario with every file read, every matrix validated, and the core
/// configs constructed.
pub struct ResolvedScenario {
    pub objective: ObjectiveConfig,
    pub initial_control: ControlField,
    pub optimizer: Option<OptimizerSpec>,
    pub output_dir: PathBuf,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("cannot parse {what} {}: {e}", path.display())))
}

pub fn load_scenario(path: &Path) -> CliResult<(ScenarioConfig, PathBuf)> {
    let config: ScenarioConfig = read_json(path, "scenario config")?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((config, dir))
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ScenarioConfig {
    /// Validate cross-field consistency and build the core configs.
    /// `output_override` (from `--output-dir`) wins over the config's
    /// `output.dir`, which wins over `./out`.
    pub fn resolve(
        &self,
        config_dir: &Path,
        output_override: Option<&Path>,
    ) -> CliResult<ResolvedScenario> {
        let model_path = resolve_path(config_dir, &self.model);
        let model: LindbladModel = read_json(&model_path, "model file")?;
        model
            .validate(self.objective.normalized)
            .map_err(|e| Failure::config(format!("model file {}: {e}", model_path.display())))?;

        let control = self.build_control()?;

        let observable = Observable::new(self.objective.observable.0.clone())
            .map_err(|e| Failure::config(format!("objective.observable: {e}")))?;

        let rho0 = self.build_rho0(model.dim)?;

        if !(self.simulation.eps > 0.0 && self.simulation.eps < 1.0) {
            return Err(Failure::config(format!(
                "simulation.eps must lie in (0, 1), got {}",
                self.simulation.eps
            )));
        }
        match self.simulation.mode {
            SimMode::Oracle { steps } if steps == 0 => {
                return Err(Failure::config("simulation.steps must be ≥ 1 in oracle mode"));
            }
            _ => {}
        }

        let objective = ObjectiveConfig {
            model,
            observable,
            rho0,
            horizon: self.control.horizon,
            n_intervals: self.control.n_intervals,
            alpha: self.objective.alpha,
            maximize: self.objective.maximize,
            eps_sim: self.simulation.eps,
            sim_mode: self.simulation.mode.clone(),
        };
        objective
            .validate(self.objective.normalized)
            .map_err(|e| Failure::config(e.to_string()))?;

        if let Some(opt) = &self.optimizer {
            opt.validate()?;
        }

        let output_dir = match (output_override, &self.output) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(o)) => resolve_path(config_dir, &o.dir),
            (None, None) => PathBuf::from("out"),
        };

        Ok(ResolvedScenario {
            objective,
            initial_control: control,
            optimizer: self.optimizer.clone(),
            output_dir,
        })
    }

    fn build_control(&self) -> CliResult<ControlField> {
        let c = &self.control;
        match &c.nodes {
            None => Ok(ControlField::zeros(c.n_c, c.n_intervals, c.horizon)),
            Some(rows) => {
                if rows.len() != c.n_intervals + 1 {
                    return Err(Failure::config(format!(
                        "control.nodes needs N+1 = {} rows, got {}",
                        c.n_intervals + 1,
                        rows.len()
                    )));
                }
                let mut flat = Vec::with_capacity((c.n_intervals + 1) * c.n_c);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != c.n_c {
                        return Err(Failure::config(format!(
                            "control.nodes row {i} needs n_c = {} entries, got {}",
                            c.n_c,
                            row.len()
                        )));
                    }
                    flat.extend_from_slice(row);
                }
                ControlField::new(c.n_c, c.n_intervals, c.horizon, flat)
                    .map_err(|e| Failure::config(format!("control: {e}")))
            }
        }
    }

    fn build_rho0(&self, dim: usize) -> CliResult<DensityState> {
        let spec = &self.objective.rho0;
        match (&spec.pure, &spec.matrix) {
            (Some(k), None) => {
                if *k >= dim {
                    return Err(Failure::config(format!(
                        "objective.rho0.pure index {k} out of range for dim {dim}"
                    )));
                }
                Ok(DensityState::pure(dim, *k))
            }
            (None, Some(m)) => DensityState::new(m.0.clone())
                .map_err(|e| Failure::config(format!("objective.rho0.matrix: {e}"))),
            _ => Err(Failure::config(
                "objective.rho0 needs exactly one of `pure` or `matrix`",
            )),
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.epsilon > 0.0) {
            return Err(Failure::config("optimizer.epsilon must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Failure::config("optimizer.delta must lie in (0, 1)"));
        }
        if !(self.delta_f > 0.0) {
            return Err(Failure::config("optimizer.delta_f must be positive"));
        }
        if !(self.eps_g >= 0.0) {
            return Err(Failure::config("optimizer.eps_g must be nonnegative"));
        }
        if !(self.c > 0.0) {
            return Err(Failure::config("optimizer.c must be positive"));
        }
        if !(self.fd_order == 1 || self.fd_order == 2) {
            return Err(Failure::config("optimizer.fd_order must be 1 or 2"));
        }
        if let Some(chi) = self.chi {
            if !(chi > 0.0) {
                return Err(Failure::config("optimizer.chi must be positive"));
            }
        }
        Ok(())
    }

    pub fn gradient_config(&self) -> GradientOracleConfig {
        GradientOracleConfig {
            order: self.fd_order,
            fd_step: self.fd_step,
            noise: self.noise_mode,
            eps_g: self.eps_g,
            seed: self.seed,
        }
    }

    /// Derive the full PAGD ledger for `objective`, honoring the ℓ/ϱ
    /// overrides and the iteration cap.
    pub fn pagd_params(&self, objective: &ObjectiveConfig) -> CliResult<PagdParams> {
        let (ell_a, rho_a) = objective.lipschitz_constants();
        let ell = self.ell.unwrap_or(ell_a);
        let rho = self.rho.unwrap_or(rho_a);
        let mut params = PagdParams::derive(
            ell,
            rho,
            self.epsilon,
            self.delta,
            self.delta_f,
            objective.n_coords(),
            self.eps_g,
            self.chi,
            self.c,
        )
        .map_err(|e| Failure::config(e.to_string()))?;
        if let Some(cap) = self.k_max_cap {
            if cap == 0 {
                return Err(Failure::config("optimizer.k_max_cap must be ≥ 1"));
            }
            params.k_max = params.k_max.min(cap);
        }
        Ok(params)
    }
}
