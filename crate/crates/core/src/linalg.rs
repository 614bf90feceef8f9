//! Dense symmetric-matrix kernels: spectral square roots, rank-one inverse
//! updates, operator norms and extreme eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance below which negative eigenvalues are treated as zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// A dense real symmetric matrix. Symmetry is exact: the stored matrix
/// equals its transpose bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Builds a matrix from row-major entries. Entries mirrored across the
    /// diagonal may differ by rounding only; they are averaged.
    pub fn new(order: usize, entries: &[f64]) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidSpec("matrix order must be at least 1".into()));
        }
        if entries.len() != order * order {
            return Err(Error::DimensionMismatch { expected: order * order, found: entries.len() });
        }
        Self::from_matrix(DMatrix::from_row_slice(order, order, entries))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidSpec(format!("expected a nonempty square matrix, got {}x{}", m.nrows(), m.ncols())));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetric part `(M + Mᵀ)/2` of a square matrix, with exact symmetry.
    pub fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "symmetrize requires a square matrix");
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymmetricMatrix(m)
    }

    pub fn identity(order: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(order, order))
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(diag))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues (ascending) and the matching orthonormal eigenvectors.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.0.clone());
        let n = self.order();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (k, &i) in idx.iter().enumerate() {
            vectors.set_column(k, &eig.eigenvectors.column(i));
        }
        (values, vectors)
    }

    /// Applies a scalar function to the spectrum: `V diag(f(λ)) Vᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let (values, vectors) = self.eigen();
        let mapped = DVector::from_iterator(values.len(), values.iter().map(|&l| f(l)));
        let m = &vectors * DMatrix::from_diagonal(&mapped) * vectors.transpose();
        SymmetricMatrix::symmetrize(m)
    }

    /// Largest absolute eigenvalue (the operator norm of a symmetric matrix).
    pub fn spectral_norm(&self) -> f64 {
        let (lo, hi) = eig_extremes(self);
        lo.abs().max(hi.abs())
    }

    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }
}

impl std::ops::Mul<&DVector<f64>> for &SymmetricMatrix {
    type Output = DVector<f64>;
    fn mul(self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.0 * rhs
    }
}

fn checked_spectrum(f: &SymmetricMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mut values, vectors) = f.eigen();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = -PSD_TOLERANCE * scale;
    let min = values.min();
    if min < floor {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok((values, vectors))
}

/// Symmetric positive semidefinite square root via eigendecomposition.
/// Negative eigenvalues within `1e-10·‖F‖` of zero are clamped.
pub fn sym_sqrt(f: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let (values, vectors) = checked_spectrum(f)?;
    let roots = values.map(f64::sqrt);
    Ok(SymmetricMatrix::symmetrize(&vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()))
}

/// Inverse of the symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt(f: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let (values, vectors) = checked_spectrum(f)?;
    if values.min() <= 0.0 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: values.min() });
    }
    let inv_roots = values.map(|v| 1.0 / v.sqrt());
    Ok(SymmetricMatrix::symmetrize(&vectors * DMatrix::from_diagonal(&inv_roots) * vectors.transpose()))
}

/// Inverse of a symmetric positive definite matrix.
pub fn sym_inverse(f: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let (values, vectors) = checked_spectrum(f)?;
    if values.min() <= 0.0 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: values.min() });
    }
    let inv = values.map(|v| 1.0 / v);
    Ok(SymmetricMatrix::symmetrize(&vectors * DMatrix::from_diagonal(&inv) * vectors.transpose()))
}

/// `(diag(D) − ppᵀ)⁻¹` by Sherman–Morrison:
/// `D⁻¹ + D⁻¹ppᵀD⁻¹ / (1 − pᵀD⁻¹p)`.
pub fn diag_minus_rank_one_inverse(d: &DVector<f64>, p: &DVector<f64>) -> Result<SymmetricMatrix> {
    if d.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: d.len(), found: p.len() });
    }
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidSpec("diagonal must be strictly positive".into()));
    }
    let dinv_p = p.component_div(d);
    let denominator = 1.0 - p.dot(&dinv_p);
    if denominator <= 1e-14 {
        return Err(Error::SingularUpdate { denominator });
    }
    let mut m = DMatrix::from_diagonal(&d.map(|x| 1.0 / x));
    m += &dinv_p * dinv_p.transpose() / denominator;
    Ok(SymmetricMatrix::symmetrize(m))
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eig_extremes(a: &SymmetricMatrix) -> (f64, f64) {
    let values = SymmetricEigen::new(a.as_matrix().clone()).eigenvalues;
    (values.min(), values.max())
}
