use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::ExponentialFamily;
use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, SymmetricMatrix};
use crate::rng::Rng;

/// Gaussian location family with known covariance `C`: the sufficient
/// statistic is `X ~ N(Cθ, C)`, `ψ(θ) = θᵀCθ/2`.
#[derive(Debug, Clone)]
pub struct GaussianLocation {
    cov: SymmetricMatrix,
    root: DMatrix<f64>,
}

impl GaussianLocation {
    pub fn new(cov: SymmetricMatrix) -> Result<Self> {
        let root = sym_sqrt(&cov)?;
        let (lo, _) = crate::linalg::eig_extremes(&cov);
        if lo <= 0.0 {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lo });
        }
        Ok(GaussianLocation { cov, root: root.into_inner() })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianLocation { cov: SymmetricMatrix::identity(dim), root: DMatrix::identity(dim, dim) }
    }
}

impl ExponentialFamily for GaussianLocation {
    fn name(&self) -> &str {
        "gaussian-location"
    }

    fn dim(&self) -> usize {
        self.cov.order()
    }

    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim() && theta.iter().all(|t| t.is_finite())
    }

    fn log_partition(&self, theta: &DVector<f64>) -> f64 {
        0.5 * self.cov.quad_form(theta)
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.cov * theta
    }

    fn hessian(&self, _theta: &DVector<f64>) -> SymmetricMatrix {
        self.cov.clone()
    }

    fn sample(&self, theta: &DVector<f64>, count: usize, rng: &mut Rng) -> DMatrix<f64> {
        let d = self.dim();
        let mean = self.grad(theta);
        let mut x = DMatrix::zeros(count, d);
        let mut z = DVector::zeros(d);
        for i in 0..count {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let row = &mean + &self.root * &z;
            x.set_row(i, &row.transpose());
        }
        x
    }
}
