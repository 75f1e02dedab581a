//! Dense complex matrix helpers.
//!
//! Everything at desk scale (a few qubits) uses heap-allocated `nalgebra` matrices over
//! `Complex<f64>`. Spectral quantities of Hermitian constructions go through
//! `SymmetricEigen`, which handles complex Hermitian input.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = Complex::new(0.0, 1.0);
pub const ONE: C64 = Complex::new(1.0, 0.0);
pub const ZERO: C64 = Complex::new(0.0, 0.0);

/// Complex scalar from real part.
#[inline]
pub fn re(x: f64) -> C64 {
    Complex::new(x, 0.0)
}

/// `true` if every entry is finite (both components).
pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest entrywise deviation from Hermiticity, `max_ij |m_ij − conj(m_ji)|`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Spectral norm ‖m‖ = σ_max(m), computed as √λ_max(m†m).
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.iter().all(|z| z.norm_sqr() == 0.0) {
        return 0.0;
    }
    let gram = m.adjoint() * m;
    let lam = hermitian_eigenvalues(&gram).last().copied().unwrap_or(0.0);
    lam.max(0.0).sqrt()
}

/// Trace norm ‖m‖₁ = Σ|λ_i| for Hermitian `m`.
pub fn trace_norm_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().map(|l| l.abs()).sum()
}

/// Trace distance ½‖a − b‖₁ between two Hermitian matrices.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * trace_norm_hermitian(&(a - b))
}

/// `exp(factor·m)` for Hermitian `m`, via eigendecomposition `U e^{factor·λ} U†`.
pub fn exp_hermitian(m: &CMatrix, factor: C64) -> CMatrix {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut core = CMatrix::zeros(n, n);
    for k in 0..n {
        core[(k, k)] = (factor * re(eig.eigenvalues[k])).exp();
    }
    &eig.eigenvectors * core * eig.eigenvectors.adjoint()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column-major vectorization of a square matrix.
pub fn vec_of(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for a `dim × dim` matrix.
pub fn unvec(v: &CVector, dim: usize) -> CMatrix {
    CMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// 2×2 identity and Pauli matrices, plus the ladder operators σ₊ = |1⟩⟨0| …
/// Basis convention: index 0 = ground |0⟩, index 1 = excited |1⟩.
pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Lowering operator |0⟩⟨1|: maps the excited state to the ground state.
pub fn sigma_minus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
}

/// Raising operator |1⟩⟨0|.
pub fn sigma_plus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
}

/// Projector |k⟩⟨k| in dimension `dim`.
pub fn projector(dim: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(k, k)] = ONE;
    m
}

/// Structural check used on every ingested matrix: square, finite entries.
pub fn check_square_finite(m: &CMatrix, what: &str) -> crate::Result<()> {
    if m.nrows() != m.ncols() {
        return Err(crate::CoreError::InvalidMatrix(format!(
            "{what}: expected a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_finite(m) {
        return Err(crate::CoreError::InvalidMatrix(format!("{what}: non-finite entry")));
    }
    Ok(())
}

/// JSON encoding of a complex matrix: row-major nested arrays of `[re, im]` pairs.
pub mod mat_serde {
    use super::{C64, CMatrix};
    use serde::de::Error as DeError;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        let mut rows = s.serialize_seq(Some(m.nrows()))?;
        for i in 0..m.nrows() {
            let row: Vec<[f64; 2]> = (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect();
            rows.serialize_element(&row)?;
        }
        rows.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let n = rows.len();
        if n == 0 {
            return Err(D::Error::custom("matrix: empty"));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom(format!(
                "matrix: expected square {n}×{n} row-major nested arrays of [re, im]"
            )));
        }
        let mut m = CMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &[a, b]) in row.iter().enumerate() {
                m[(i, j)] = C64::new(a, b);
            }
        }
        Ok(m)
    }
}

/// Same encoding for a list of matrices.
pub mod mat_list_serde {
    use super::CMatrix;
    use serde::de::Error as DeError;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize)]
    struct Wrap<'a>(#[serde(with = "super::mat_serde")] &'a CMatrix);

    pub fn serialize<S: Serializer>(ms: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(ms.len()))?;
        for m in ms {
            seq.serialize_element(&Wrap(m))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
        let raw: Vec<Vec<Vec<[f64; 2]>>> = Vec::deserialize(d)?;
        raw.into_iter()
            .enumerate()
            .map(|(idx, rows)| {
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(D::Error::custom(format!("matrix #{idx}: expected square nested arrays")));
                }
                let mut m = CMatrix::zeros(n, n);
                for (i, row) in rows.iter().enumerate() {
                    for (j, &[a, b]) in row.iter().enumerate() {
                        m[(i, j)] = super::C64::new(a, b);
                    }
                }
                Ok(m)
            })
            .collect()
    }
}
