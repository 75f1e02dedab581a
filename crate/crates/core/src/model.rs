//! Controlled Lindblad models, control fields, density matrices, and the norm
//! machinery used for time rescaling.
//!
//! The master equation in GKSL form (Breuer & Petruccione, *The Theory of Open
//! Quantum Systems*) with affine control coupling reads
//!
//! ```text
//!   dρ/dt = −i[H(t), ρ] + Σ_j (L_j ρ L_j† − ½{L_j†L_j, ρ}),
//!   H(t)  = H₀ + Σ_β u_β(t)·μ_β,
//! ```
//!
//! where each `u_β` is piecewise linear on the uniform grid `t_i = i·T/N`.
//!
//! The instantaneous generator strength is measured by the norm
//! `be(t) = ‖H(t)‖ + ½·Σ_j ‖L_j‖²` (spectral norms). Its running integral
//! `var(t) = ∫₀ᵗ be(s) ds` defines the rescaled clock in which simulation is
//! segmented; [`VarMap`] carries `var`, its inverse, and the matching `be` model.

use crate::error::{CoreError, Result};
use crate::linalg::{self, re, CMatrix, C64};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// A time-independent Lindblad model with affine control coupling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LindbladModel {
    /// Hilbert-space dimension.
    pub dim: usize,
    /// Drift Hamiltonian H₀ (Hermitian).
    #[serde(with = "linalg::mat_serde")]
    pub h0: CMatrix,
    /// Control coupling operators μ_β (Hermitian).
    #[serde(with = "linalg::mat_list_serde", default)]
    pub mu: Vec<CMatrix>,
    /// Jump operators L_j (arbitrary).
    #[serde(with = "linalg::mat_list_serde", default)]
    pub jumps: Vec<CMatrix>,
}

impl LindbladModel {
    pub fn new(h0: CMatrix, mu: Vec<CMatrix>, jumps: Vec<CMatrix>) -> Result<Self> {
        let dim = h0.nrows();
        let model = Self { dim, h0, mu, jumps };
        model.validate(false)?;
        Ok(model)
    }

    pub fn n_controls(&self) -> usize {
        self.mu.len()
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// Structural validation. With `normalized` set, additionally requires
    /// `‖H₀‖, ‖μ_β‖, ‖L_j‖ ≤ 1 + 1e-9`.
    pub fn validate(&self, normalized: bool) -> Result<()> {
        if self.dim == 0 {
            return Err(CoreError::InvalidModel("dimension must be positive".into()));
        }
        linalg::check_square_finite(&self.h0, "h0")?;
        if self.h0.nrows() != self.dim {
            return Err(CoreError::InvalidModel(format!(
                "h0 is {}×{} but dim = {}",
                self.h0.nrows(),
                self.h0.ncols(),
                self.dim
            )));
        }
        if linalg::hermiticity_defect(&self.h0) > 1e-12 {
            return Err(CoreError::InvalidModel("h0 is not Hermitian (tolerance 1e-12)".into()));
        }
        for (b, m) in self.mu.iter().enumerate() {
            linalg::check_square_finite(m, &format!("mu[{b}]"))?;
            if m.nrows() != self.dim {
                return Err(CoreError::InvalidModel(format!("mu[{b}] has wrong dimension")));
            }
            if linalg::hermiticity_defect(m) > 1e-12 {
                return Err(CoreError::InvalidModel(format!("mu[{b}] is not Hermitian")));
            }
        }
        for (j, l) in self.jumps.iter().enumerate() {
            linalg::check_square_finite(l, &format!("jumps[{j}]"))?;
            if l.nrows() != self.dim {
                return Err(CoreError::InvalidModel(format!("jumps[{j}] has wrong dimension")));
            }
        }
        if normalized {
            let check = |name: String, m: &CMatrix| -> Result<()> {
                let n = linalg::spectral_norm(m);
                if n > 1.0 + 1e-9 {
                    return Err(CoreError::InvalidModel(format!(
                        "{name} has spectral norm {n:.6} > 1 but the normalization flag is set"
                    )));
                }
                Ok(())
            };
            check("h0".into(), &self.h0)?;
            for (b, m) in self.mu.iter().enumerate() {
                check(format!("mu[{b}]"), m)?;
            }
            for (j, l) in self.jumps.iter().enumerate() {
                check(format!("jumps[{j}]"), l)?;
            }
        }
        Ok(())
    }

    /// The controlled Hamiltonian H(t) = H₀ + Σ_β u_β(t)·μ_β.
    ///
    /// Errors if `t` lies outside `[0, T]`.
    pub fn hamiltonian_at(&self, u: &ControlField, t: f64) -> Result<CMatrix> {
        u.check_domain(t)?;
        if self.mu.len() != u.n_controls() {
            return Err(CoreError::InvalidControl(format!(
                "model has {} control operators but the field has {}",
                self.mu.len(),
                u.n_controls()
            )));
        }
        let mut h = self.h0.clone();
        for (b, m) in self.mu.iter().enumerate() {
            let ub = u.value(b, t);
            h.zip_apply(m, |hij, mij| *hij += re(ub) * mij);
        }
        Ok(h)
    }

    /// ½·Σ_j ‖L_j‖² — the jump contribution to the be-norm (time-independent).
    pub fn jump_weight(&self) -> f64 {
        0.5 * self.jumps.iter().map(|l| linalg::spectral_norm(l).powi(2)).sum::<f64>()
    }

    /// `true` if every operator in the model is identically zero.
    pub fn is_zero(&self) -> bool {
        let z = |m: &CMatrix| m.iter().all(|c| c.re == 0.0 && c.im == 0.0);
        z(&self.h0) && self.mu.iter().all(|m| z(m)) && self.jumps.iter().all(|m| z(m))
    }
}

/// Instantaneous generator norm `be(t) = ‖H(t)‖ + ½Σ_j‖L_j‖²`.
pub fn be_norm(model: &LindbladModel, u: &ControlField, t: f64) -> Result<f64> {
    let h = model.hamiltonian_at(u, t)?;
    Ok(linalg::spectral_norm(&h) + model.jump_weight())
}

/// `∫₀ᵀ be(s) ds` by composite Simpson quadrature with `quad_points` subintervals
/// (rounded up to an even count).
pub fn be_norm_l1(model: &LindbladModel, u: &ControlField, quad_points: usize) -> Result<f64> {
    if quad_points < 2 {
        return Err(CoreError::InvalidControl("be_norm_l1 needs at least 2 quadrature points".into()));
    }
    let n = quad_points + quad_points % 2;
    let t_total = u.horizon();
    let h = t_total / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let t = if i == n { t_total } else { i as f64 * h };
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * be_norm(model, u, t)?;
    }
    Ok(acc * h / 3.0)
}

/// Largest sampled value of `be(t)` on a uniform grid (default 256 intervals).
pub fn be_norm_inf(model: &LindbladModel, u: &ControlField, samples: usize) -> Result<f64> {
    let n = samples.max(2);
    let mut worst = 0.0f64;
    for i in 0..=n {
        let t = u.horizon() * i as f64 / n as f64;
        worst = worst.max(be_norm(model, u, t)?);
    }
    Ok(worst)
}

/// Piecewise-linear control fields on the uniform grid `t_i = i·T/N`.
///
/// Node storage is row-major: `nodes[i·n_c + β]` is the value of control `β` at `t_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ControlFieldRaw", into = "ControlFieldRaw")]
pub struct ControlField {
    n_controls: usize,
    n_intervals: usize,
    horizon: f64,
    nodes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ControlFieldRaw {
    n_c: usize,
    #[serde(rename = "N")]
    n_intervals: usize,
    #[serde(rename = "T")]
    horizon: f64,
    /// One row per grid node, `n_c` entries per row.
    nodes: Vec<Vec<f64>>,
}

impl TryFrom<ControlFieldRaw> for ControlField {
    type Error = CoreError;
    fn try_from(raw: ControlFieldRaw) -> Result<Self> {
        if raw.nodes.len() != raw.n_intervals + 1 {
            return Err(CoreError::InvalidControl(format!(
                "nodes: expected {} rows (N+1), got {}",
                raw.n_intervals + 1,
                raw.nodes.len()
            )));
        }
        let mut flat = Vec::with_capacity((raw.n_intervals + 1) * raw.n_c);
        for (i, row) in raw.nodes.iter().enumerate() {
            if row.len() != raw.n_c {
                return Err(CoreError::InvalidControl(format!(
                    "nodes row {i}: expected {} entries (n_c), got {}",
                    raw.n_c,
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        ControlField::new(raw.n_c, raw.n_intervals, raw.horizon, flat)
    }
}

impl From<ControlField> for ControlFieldRaw {
    fn from(u: ControlField) -> Self {
        let rows = (0..=u.n_intervals)
            .map(|i| (0..u.n_controls).map(|b| u.nodes[i * u.n_controls + b]).collect())
            .collect();
        ControlFieldRaw {
            n_c: u.n_controls,
            n_intervals: u.n_intervals,
            horizon: u.horizon,
            nodes: rows,
        }
    }
}

impl ControlField {
    /// `nodes` is row-major with `(n_intervals+1)·n_controls` entries.
    pub fn new(n_controls: usize, n_intervals: usize, horizon: f64, nodes: Vec<f64>) -> Result<Self> {
        if n_intervals == 0 {
            return Err(CoreError::InvalidControl("need at least one grid interval".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CoreError::InvalidControl(format!("horizon must be positive, got {horizon}")));
        }
        if nodes.len() != (n_intervals + 1) * n_controls {
            return Err(CoreError::InvalidControl(format!(
                "expected {} node values, got {}",
                (n_intervals + 1) * n_controls,
                nodes.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::InvalidControl("non-finite node value".into()));
        }
        Ok(Self { n_controls, n_intervals, horizon, nodes })
    }

    /// All-zero field with the given grid.
    pub fn zeros(n_controls: usize, n_intervals: usize, horizon: f64) -> Self {
        Self::new(n_controls, n_intervals, horizon, vec![0.0; (n_intervals + 1) * n_controls]).unwrap()
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Grid spacing δt = T/N.
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_intervals as f64
    }

    /// Total number of optimization coordinates, `n_c·(N+1)`.
    pub fn n_coords(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize, beta: usize) -> f64 {
        self.nodes[i * self.n_controls + beta]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < 0.0 || t > self.horizon {
            return Err(CoreError::TimeOutOfDomain { t, horizon: self.horizon });
        }
        Ok(())
    }

    /// Linear interpolation of control `beta` at time `t ∈ [0, T]` (caller-checked domain;
    /// out-of-range times clamp to the horizon).
    pub fn value(&self, beta: usize, t: f64) -> f64 {
        debug_assert!(beta < self.n_controls);
        let h = self.dt();
        let x = (t / h).clamp(0.0, self.n_intervals as f64);
        let i = (x.floor() as usize).min(self.n_intervals - 1);
        let frac = x - i as f64;
        let a = self.node(i, beta);
        let b = self.node(i + 1, beta);
        a + (b - a) * frac
    }

    /// Optimization vector layout: one block of `N+1` node values per control,
    /// controls concatenated in order.
    pub fn to_dvector(&self) -> DVector<f64> {
        let np = self.n_intervals + 1;
        let mut v = DVector::zeros(self.n_coords());
        for b in 0..self.n_controls {
            for i in 0..np {
                v[b * np + i] = self.node(i, b);
            }
        }
        v
    }

    /// Inverse of [`Self::to_dvector`] on the same grid.
    pub fn with_coords(&self, v: &DVector<f64>) -> Result<Self> {
        if v.len() != self.n_coords() {
            return Err(CoreError::InvalidControl(format!(
                "expected {} coordinates, got {}",
                self.n_coords(),
                v.len()
            )));
        }
        let np = self.n_intervals + 1;
        let mut nodes = vec![0.0; self.nodes.len()];
        for b in 0..self.n_controls {
            for i in 0..np {
                nodes[i * self.n_controls + b] = v[b * np + i];
            }
        }
        Self::new(self.n_controls, self.n_intervals, self.horizon, nodes)
    }
}

/// A density matrix with validated structure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityState {
    #[serde(with = "linalg::mat_serde")]
    rho: CMatrix,
}

impl DensityState {
    /// Strict construction: Hermitian to 1e-10, unit trace to 1e-8, eigenvalues ≥ −1e-8.
    pub fn new(rho: CMatrix) -> Result<Self> {
        linalg::check_square_finite(&rho, "rho")?;
        let herm = linalg::hermiticity_defect(&rho);
        if herm > 1e-10 {
            return Err(CoreError::InvalidState(format!("Hermiticity defect {herm:.3e} > 1e-10")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(CoreError::InvalidState(format!("trace {tr} differs from 1 beyond 1e-8")));
        }
        let min_eig = linalg::min_eigenvalue_hermitian(&rho);
        if min_eig < -1e-8 {
            return Err(CoreError::InvalidState(format!("negative eigenvalue {min_eig:.3e} < -1e-8")));
        }
        Ok(Self { rho })
    }

    /// Raw construction for propagator outputs, where the trace defect is a reported
    /// diagnostic rather than a validity failure. Checks shape, finiteness, and
    /// approximate Hermiticity only.
    pub fn from_raw(rho: CMatrix) -> Result<Self> {
        linalg::check_square_finite(&rho, "rho")?;
        let herm = linalg::hermiticity_defect(&rho);
        if herm > 1e-6 {
            return Err(CoreError::InvalidState(format!("Hermiticity defect {herm:.3e} > 1e-6")));
        }
        Ok(Self { rho })
    }

    /// Pure state |k⟩⟨k|.
    pub fn pure(dim: usize, k: usize) -> Self {
        Self { rho: linalg::projector(dim, k) }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// |tr(ρ) − 1|.
    pub fn trace_defect(&self) -> f64 {
        (self.rho.trace() - re(1.0)).norm()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.rho)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue_hermitian(&self.rho)
    }
}

/// A Hermitian observable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Observable {
    #[serde(with = "linalg::mat_serde")]
    matrix: CMatrix,
}

impl Observable {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        linalg::check_square_finite(&matrix, "observable")?;
        let herm = linalg::hermiticity_defect(&matrix);
        if herm > 1e-12 {
            return Err(CoreError::InvalidMatrix(format!(
                "observable Hermiticity defect {herm:.3e} > 1e-12"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn norm(&self) -> f64 {
        linalg::spectral_norm(&self.matrix)
    }

    /// tr(𝒪ρ), guaranteed real for Hermitian 𝒪 and ρ (imaginary part is a numerics check).
    pub fn expectation(&self, state: &DensityState) -> f64 {
        let val = (&self.matrix * state.matrix()).trace();
        debug_assert!(val.im.abs() < 1e-8, "non-real expectation {val}");
        val.re
    }
}

/// The rescaled clock `var(t) = ∫₀ᵗ be(s) ds`, its inverse, and the matching `be` model.
///
/// `be` is modelled per cell by the quadratic through the cell endpoints and midpoint
/// (the Simpson parabola), with cells aligned to the control grid so the only kinks of
/// `be` sit on cell boundaries; `var` integrates that model exactly (piecewise cubic).
/// Rescaled dynamics built from this map are exactly equivalent to the original dynamics
/// because the *same* `be` model is used for the clock and for the operator scaling.
#[derive(Clone, Debug)]
pub struct VarMap {
    cell_width: f64,
    horizon: f64,
    /// Per cell: cumulative var at the left edge and local quadratic coefficients of be.
    cells: Vec<VarCell>,
    total: f64,
}

#[derive(Clone, Debug)]
struct VarCell {
    v0: f64,
    c0: f64,
    c1: f64,
    c2: f64,
}

/// Default number of quadrature cells for [`VarMap::build`] and [`be_norm_l1`]:
/// `64·⌈T⌉`, refined to a multiple of the control grid.
pub fn default_quad_cells(horizon: f64) -> usize {
    64 * (horizon.ceil().max(1.0) as usize)
}

impl VarMap {
    /// Build the map by sampling `be` on `≥ cells_hint` cells aligned to the control grid.
    ///
    /// Errors with [`CoreError::SingularRescaling`] if `be` vanishes (identically zero
    /// Lindbladian) or dips below 1e-10 of its peak anywhere on the grid.
    pub fn build(model: &LindbladModel, u: &ControlField, cells_hint: usize) -> Result<Self> {
        let n_int = u.n_intervals();
        let per = cells_hint.max(n_int).div_ceil(n_int).max(1);
        let n_cells = per * n_int;
        let horizon = u.horizon();
        let w = horizon / n_cells as f64;

        let mut samples = Vec::with_capacity(2 * n_cells + 1);
        for k in 0..=(2 * n_cells) {
            let t = if k == 2 * n_cells { horizon } else { 0.5 * w * k as f64 };
            samples.push(be_norm(model, u, t)?);
        }
        let peak = samples.iter().cloned().fold(0.0f64, f64::max);
        if peak <= 0.0 {
            return Err(CoreError::SingularRescaling);
        }
        let floor = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        if floor < 1e-10 * peak.max(1.0) {
            return Err(CoreError::SingularRescaling);
        }

        let mut cells = Vec::with_capacity(n_cells);
        let mut acc = 0.0;
        for c in 0..n_cells {
            let f0 = samples[2 * c];
            let fm = samples[2 * c + 1];
            let f1 = samples[2 * c + 2];
            let c0 = f0;
            let c1 = (4.0 * fm - 3.0 * f0 - f1) / w;
            let c2 = (2.0 * f0 - 4.0 * fm + 2.0 * f1) / (w * w);
            cells.push(VarCell { v0: acc, c0, c1, c2 });
            acc += w * (f0 + 4.0 * fm + f1) / 6.0;
        }
        Ok(Self { cell_width: w, horizon, cells, total: acc })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// var(T): the total rescaled duration.
    pub fn total(&self) -> f64 {
        self.total
    }

    fn cell_index(&self, t: f64) -> usize {
        ((t / self.cell_width) as usize).min(self.cells.len() - 1)
    }

    /// The modelled `be(t)`, clamped away from zero.
    pub fn be(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        let c = &self.cells[self.cell_index(t)];
        let tau = t - self.cell_index(t) as f64 * self.cell_width;
        (c.c0 + c.c1 * tau + c.c2 * tau * tau).max(1e-14)
    }

    /// var(t) = ∫₀ᵗ be.
    pub fn var(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        let idx = self.cell_index(t);
        let c = &self.cells[idx];
        let tau = t - idx as f64 * self.cell_width;
        c.v0 + c.c0 * tau + 0.5 * c.c1 * tau * tau + c.c2 * tau * tau * tau / 3.0
    }

    /// var⁻¹(x) by bisection to 1e-10 in `t`.
    pub fn inverse(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.total);
        // Locate the cell by cumulative value, then bisect inside it.
        let mut lo_cell = 0usize;
        let mut hi_cell = self.cells.len();
        while hi_cell - lo_cell > 1 {
            let mid = (lo_cell + hi_cell) / 2;
            if self.cells[mid].v0 <= x {
                lo_cell = mid;
            } else {
                hi_cell = mid;
            }
        }
        let mut lo = lo_cell as f64 * self.cell_width;
        let mut hi = (lo + self.cell_width).min(self.horizon);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.var(mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
