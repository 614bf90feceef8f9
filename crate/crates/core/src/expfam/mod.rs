//! Exponential families `f(x; θ) = exp(⟨x, θ⟩ − ψ(θ))` and concrete instances.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{eig_extremes, SymmetricMatrix};
use crate::rng::{seeded_rng, Rng};

mod gaussian;
mod multinomial;
mod mv_linear;

pub use gaussian::GaussianLocation;
pub use multinomial::{build_multinomial, multinomial_closed_forms, Multinomial, MultinomialClosedForms, MultinomialSpec};
pub use mv_linear::{build_mv_linear, cosine_design, fisher_lower_bound, MvLinear, MvLinearSpec};

/// A regular exponential family with respect to a fixed base measure.
///
/// `log_partition`, `grad` and `hessian` are only meaningful inside the
/// natural parameter domain; callers check `in_domain` first.
pub trait ExponentialFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn in_domain(&self, theta: &DVector<f64>) -> bool;
    fn log_partition(&self, theta: &DVector<f64>) -> f64;
    fn grad(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, theta: &DVector<f64>) -> SymmetricMatrix;

    /// `count` independent sufficient-statistic draws, one per row.
    fn sample(&self, theta: &DVector<f64>, count: usize, rng: &mut Rng) -> DMatrix<f64>;

    /// Draws with each row's own expectation subtracted. Identically
    /// distributed families subtract `grad(θ)`; families with a fixed design
    /// override this.
    fn sample_centered(&self, theta: &DVector<f64>, count: usize, rng: &mut Rng) -> DMatrix<f64> {
        let mut x = self.sample(theta, count, rng);
        let mean = self.grad(theta);
        for mut row in x.row_iter_mut() {
            row -= mean.transpose();
        }
        x
    }

    /// Atoms of the sufficient statistic when its law has finite support and
    /// unit base-measure mass at each atom.
    fn support(&self) -> Option<&[DVector<f64>]> {
        None
    }
}

/// A family together with its true parameter θ₀.
#[derive(Debug, Clone)]
pub struct ExpFamilyModel {
    family: Arc<dyn ExponentialFamily>,
    theta0: DVector<f64>,
}

impl ExpFamilyModel {
    pub fn new(family: Arc<dyn ExponentialFamily>, theta0: DVector<f64>) -> Result<Self> {
        if theta0.len() != family.dim() {
            return Err(Error::DimensionMismatch { expected: family.dim(), found: theta0.len() });
        }
        if !family.in_domain(&theta0) {
            return Err(Error::OutOfDomain);
        }
        // interior: every coordinate perturbation of size 1e-6 stays inside
        for i in 0..theta0.len() {
            for sign in [-1.0, 1.0] {
                let mut t = theta0.clone();
                t[i] += sign * 1e-6;
                if !family.in_domain(&t) {
                    return Err(Error::InvalidSpec("true parameter lies on the domain boundary".into()));
                }
            }
        }
        let (lo, _) = eig_extremes(&family.hessian(&theta0));
        if !(lo > 0.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lo });
        }
        Ok(ExpFamilyModel { family, theta0 })
    }

    pub fn family(&self) -> &dyn ExponentialFamily {
        self.family.as_ref()
    }

    pub fn family_arc(&self) -> Arc<dyn ExponentialFamily> {
        Arc::clone(&self.family)
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn name(&self) -> &str {
        self.family.name()
    }

    pub fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim() && self.family.in_domain(theta)
    }

    pub fn log_partition(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check(theta)?;
        Ok(self.family.log_partition(theta))
    }

    pub fn grad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(theta)?;
        Ok(self.family.grad(theta))
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> Result<SymmetricMatrix> {
        self.check(theta)?;
        Ok(self.family.hessian(theta))
    }

    /// `⟨x, θ⟩ − ψ(θ)`.
    pub fn log_density(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        self.check(theta)?;
        Ok(x.dot(theta) - self.family.log_partition(theta))
    }

    /// `n × d` matrix of sufficient statistics drawn at `theta`.
    pub fn sample_sufficient(&self, theta: &DVector<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        if n == 0 {
            return Err(Error::InvalidSpec("sample count must be at least 1".into()));
        }
        Ok(self.family.sample(theta, n, &mut seeded_rng(seed)))
    }

    /// Atom probabilities at `theta` for finite-support families.
    pub fn atom_probabilities(&self, theta: &DVector<f64>) -> Option<Vec<f64>> {
        let atoms = self.family.support()?;
        let psi = self.family.log_partition(theta);
        Some(atoms.iter().map(|x| (x.dot(theta) - psi).exp()).collect())
    }

    fn check(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: theta.len() });
        }
        if !self.family.in_domain(theta) {
            return Err(Error::OutOfDomain);
        }
        Ok(())
    }
}

/// Central finite-difference gradient of `f`, step `h` per coordinate.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        }),
    )
}

/// Central finite-difference Jacobian of a vector map, one column per input.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn model_rejects_out_of_domain_theta0() {
        let fam = Arc::new(MvLinear::new(&MvLinearSpec::simple(1, 1, 1.0, 0.0, 4)).unwrap());
        assert!(matches!(ExpFamilyModel::new(fam.clone(), DVector::from_vec(vec![0.5, 0.0])), Err(Error::OutOfDomain)));
        assert!(ExpFamilyModel::new(fam, DVector::from_vec(vec![-0.5, 0.0])).is_ok());
    }

    #[test]
    fn log_density_at_zero_statistic_is_minus_psi() {
        let m = Multinomial::from_probs(&[0.2, 0.5, 0.3]).unwrap();
        let theta = DVector::from_vec(vec![0.3, -1.0]);
        let ld = m.log_density(&DVector::zeros(2), &theta).unwrap();
        assert_abs_diff_eq!(ld, -m.log_partition(&theta).unwrap(), epsilon = 1e-15);
        assert!(matches!(m.log_density(&DVector::zeros(2), &DVector::from_vec(vec![f64::NAN, 0.0])), Err(Error::OutOfDomain)));
    }

    #[test]
    fn fd_helpers_on_quadratic() {
        let f = |x: &DVector<f64>| x[0] * x[0] + 3.0 * x[0] * x[1];
        let g = fd_gradient(f, &DVector::from_vec(vec![1.0, 2.0]), 1e-5);
        assert_abs_diff_eq!(g[0], 8.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-8);
        let j = fd_jacobian(|x| DVector::from_vec(vec![2.0 * x[0], x[0] + x[1]]), &DVector::zeros(2), 1e-4);
        assert_abs_diff_eq!(j, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]), epsilon = 1e-9);
    }
}
