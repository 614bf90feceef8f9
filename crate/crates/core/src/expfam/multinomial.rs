use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::{ExpFamilyModel, ExponentialFamily};
use crate::error::{Error, Result};
use crate::linalg::{diag_minus_rank_one_inverse, sym_inverse, sym_sqrt, SymmetricMatrix};
use crate::rng::Rng;

/// Category probabilities `p₀, …, p_d`; category 0 is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialSpec {
    pub probs: Vec<f64>,
}

impl MultinomialSpec {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let spec = MultinomialSpec { probs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(categories: usize) -> Self {
        MultinomialSpec { probs: vec![1.0 / categories as f64; categories] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() < 2 {
            return Err(Error::InvalidSimplex("need at least two categories".into()));
        }
        if let Some(i) = self.probs.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidSimplex(format!("p[{i}] = {} is not strictly positive", self.probs[i])));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSimplex(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.probs.len() - 1
    }

    /// `max_i 1/p_i`.
    pub fn balance(&self) -> f64 {
        self.probs.iter().fold(0.0f64, |m, p| m.max(1.0 / p))
    }

    /// `θ_i = log(p_i / p₀)`.
    pub fn theta(&self) -> DVector<f64> {
        let p0 = self.probs[0];
        DVector::from_iterator(self.dim(), self.probs[1..].iter().map(|p| (p / p0).ln()))
    }

    fn p_tail(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.probs[1..])
    }
}

/// Multinomial with one-hot sufficient statistic over categories `1..=d`.
#[derive(Debug, Clone)]
pub struct Multinomial {
    dim: usize,
    atoms: Vec<DVector<f64>>,
}

impl Multinomial {
    pub fn new(dim: usize) -> Self {
        let mut atoms = vec![DVector::zeros(dim)];
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            atoms.push(e);
        }
        Multinomial { dim, atoms }
    }

    pub fn from_probs(probs: &[f64]) -> Result<ExpFamilyModel> {
        build_multinomial(&MultinomialSpec::new(probs.to_vec())?)
    }

    /// Probabilities `(p₀, …, p_d)` at `theta`, computed with a max shift.
    pub fn probs(theta: &DVector<f64>) -> Vec<f64> {
        let m = theta.iter().fold(0.0f64, |m, &t| m.max(t));
        let mut out = Vec::with_capacity(theta.len() + 1);
        out.push((-m).exp());
        out.extend(theta.iter().map(|t| (t - m).exp()));
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }
}

pub fn build_multinomial(spec: &MultinomialSpec) -> Result<ExpFamilyModel> {
    spec.validate()?;
    ExpFamilyModel::new(Arc::new(Multinomial::new(spec.dim())), spec.theta())
}

impl ExponentialFamily for Multinomial {
    fn name(&self) -> &str {
        "multinomial"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim && theta.iter().all(|t| t.is_finite())
    }

    fn log_partition(&self, theta: &DVector<f64>) -> f64 {
        let m = theta.iter().fold(0.0f64, |m, &t| m.max(t));
        m + ((-m).exp() + theta.iter().map(|t| (t - m).exp()).sum::<f64>()).ln()
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&Multinomial::probs(theta)[1..])
    }

    fn hessian(&self, theta: &DVector<f64>) -> SymmetricMatrix {
        let p = self.grad(theta);
        SymmetricMatrix::symmetrize(DMatrix::from_diagonal(&p) - &p * p.transpose())
    }

    fn sample(&self, theta: &DVector<f64>, count: usize, rng: &mut Rng) -> DMatrix<f64> {
        let cdf: Vec<f64> = Multinomial::probs(theta)
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut x = DMatrix::zeros(count, self.dim);
        for i in 0..count {
            let u: f64 = rng.random::<f64>() * cdf[self.dim];
            let k = cdf.partition_point(|&c| c <= u).min(self.dim);
            if k > 0 {
                x[(i, k - 1)] = 1.0;
            }
        }
        x
    }

    fn support(&self) -> Option<&[DVector<f64>]> {
        Some(&self.atoms)
    }
}

/// Closed-form Fisher information quantities for the multinomial.
#[derive(Debug, Clone)]
pub struct MultinomialClosedForms {
    /// `F = P − ppᵀ`.
    pub f: SymmetricMatrix,
    /// `P⁻¹ + eeᵀ/p₀`.
    pub f_inv: SymmetricMatrix,
    /// Symmetric root, `J·J = F`.
    pub j: SymmetricMatrix,
    pub j_inv: SymmetricMatrix,
    /// Non-symmetric factor `P^{1/2} − ppᵀP^{−1/2}/(1 + √p₀)`, which
    /// satisfies `J·Jᵀ = F`.
    pub j_factor: DMatrix<f64>,
    /// Exact inverse of `j_factor`: `P^{−1/2} + √p·1ᵀ/(p₀ + √p₀)`.
    pub j_factor_inv: DMatrix<f64>,
    /// `Σ 1/p_i + d/p₀`, which equals `trace(F⁻¹)`.
    pub trace_bound: f64,
    /// The same bound with `d/(1 − p₀)` in place of `d/p₀`.
    pub trace_bound_alt: f64,
}

pub fn multinomial_closed_forms(spec: &MultinomialSpec) -> Result<MultinomialClosedForms> {
    spec.validate()?;
    let d = spec.dim();
    let p0 = spec.probs[0];
    let p = spec.p_tail();
    let sqrt_p = p.map(f64::sqrt);

    let f = SymmetricMatrix::symmetrize(DMatrix::from_diagonal(&p) - &p * p.transpose());
    let f_inv = diag_minus_rank_one_inverse(&p, &p)?;
    let j = sym_sqrt(&f)?;
    let j_inv = sym_inverse(&j)?;

    let s0 = p0.sqrt();
    let j_factor = DMatrix::from_diagonal(&sqrt_p) - &p * sqrt_p.transpose() / (1.0 + s0);
    let j_factor_inv = DMatrix::from_diagonal(&sqrt_p.map(|v| 1.0 / v)) + &sqrt_p * DVector::from_element(d, 1.0).transpose() / (p0 + s0);

    let inv_sum: f64 = p.iter().map(|v| 1.0 / v).sum();
    Ok(MultinomialClosedForms {
        f,
        f_inv,
        j,
        j_inv,
        j_factor,
        j_factor_inv,
        trace_bound: inv_sum + d as f64 / p0,
        trace_bound_alt: inv_sum + d as f64 / (1.0 - p0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::fd_gradient;
    use crate::linalg::operator_norm;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_simplex(weights: &[f64]) -> MultinomialSpec {
        let total: f64 = weights.iter().sum();
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let tail: f64 = probs[1..].iter().sum();
        probs[0] = 1.0 - tail;
        MultinomialSpec::new(probs).unwrap()
    }

    #[test]
    fn binary_and_trinomial_examples() {
        let m = Multinomial::from_probs(&[0.5, 0.5]).unwrap();
        assert_eq!(m.theta0().as_slice(), &[0.0]);
        assert_abs_diff_eq!(m.hessian(m.theta0()).unwrap().as_matrix()[(0, 0)], 0.25, epsilon = 1e-15);
        // enumeration: P(x = 1) = 1/2
        assert_abs_diff_eq!(m.log_density(&DVector::from_vec(vec![1.0]), m.theta0()).unwrap(), -(2.0f64).ln(), epsilon = 1e-15);

        let t = Multinomial::from_probs(&[1.0 / 3.0; 3]).unwrap();
        let f = t.hessian(t.theta0()).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0 / 9.0, -1.0 / 9.0, -1.0 / 9.0, 2.0 / 9.0]);
        assert_abs_diff_eq!(f.as_matrix(), &want, epsilon = 1e-15);
        let x = DVector::from_vec(vec![0.0, 1.0]);
        assert_abs_diff_eq!(t.log_density(&x, t.theta0()).unwrap(), -(3.0f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn boundary_simplex_is_rejected() {
        assert!(matches!(MultinomialSpec::new(vec![1.0, 0.0, 0.0]), Err(Error::InvalidSimplex(_))));
        assert!(matches!(MultinomialSpec::new(vec![0.5, 0.6]), Err(Error::InvalidSimplex(_))));
    }

    #[test]
    fn closed_form_examples() {
        let cf = multinomial_closed_forms(&MultinomialSpec::uniform(3)).unwrap();
        assert_abs_diff_eq!(cf.f_inv.as_matrix(), &DMatrix::from_row_slice(2, 2, &[6.0, 3.0, 3.0, 6.0]), epsilon = 1e-12);

        let cf = multinomial_closed_forms(&MultinomialSpec::uniform(2)).unwrap();
        assert_abs_diff_eq!(cf.j.as_matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cf.j_inv.as_matrix()[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cf.j_factor[(0, 0)], 0.5, epsilon = 1e-15);

        let cf = multinomial_closed_forms(&MultinomialSpec::new(vec![0.7, 0.2, 0.1]).unwrap()).unwrap();
        check_identities(&cf, 2);
    }

    #[test]
    fn stable_at_extreme_theta() {
        let m = Multinomial::new(2);
        let theta = DVector::from_vec(vec![800.0, -800.0]);
        assert_abs_diff_eq!(m.log_partition(&theta), 800.0, epsilon = 1e-9);
        let g = m.grad(&theta);
        assert!(g.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampler_contract() {
        let m = Multinomial::from_probs(&[0.5, 0.5]).unwrap();
        let x = m.sample_sufficient(m.theta0(), 100_000, 11).unwrap();
        assert!((x.mean() - 0.5).abs() < 0.008);
        let one = m.sample_sufficient(m.theta0(), 1, 3).unwrap();
        assert_eq!(one.nrows(), 1);
        assert_eq!(x, m.sample_sufficient(m.theta0(), 100_000, 11).unwrap());

        let t = Multinomial::from_probs(&[0.2, 0.3, 0.1, 0.4]).unwrap();
        let x = t.sample_sufficient(t.theta0(), 100_000, 5).unwrap();
        assert!(x.row_iter().all(|r| r.sum() <= 1.0 && r.iter().all(|v| *v == 0.0 || *v == 1.0)));
        let n = x.nrows() as f64;
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(x.nrows(), 3, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / n;
        let h = t.hessian(t.theta0()).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                // variance of a product of centered indicators is bounded by 1/4
                let se = (0.25 / n).sqrt();
                assert!((cov[(a, b)] - h.as_matrix()[(a, b)]).abs() < 5.0 * se, "cov[{a},{b}]");
            }
        }
    }

    fn check_identities(cf: &MultinomialClosedForms, d: usize) {
        let id = DMatrix::<f64>::identity(d, d);
        assert!(operator_norm(&(cf.f.as_matrix() * cf.f_inv.as_matrix() - &id)) <= 1e-9);
        assert!(operator_norm(&(cf.j.as_matrix() * cf.j.as_matrix() - cf.f.as_matrix())) <= 1e-9);
        assert!(operator_norm(&(cf.j.as_matrix() * cf.j_inv.as_matrix() - &id)) <= 1e-9);
        assert!(operator_norm(&(&cf.j_factor * cf.j_factor.transpose() - cf.f.as_matrix())) <= 1e-9);
        assert!(operator_norm(&(&cf.j_factor * &cf.j_factor_inv - &id)) <= 1e-9);
        assert_eq!(cf.f_inv.as_matrix(), &cf.f_inv.as_matrix().transpose());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn closed_forms_are_consistent(weights in prop::collection::vec(0.05f64..1.0, 2..=51)) {
            let spec = random_simplex(&weights);
            let cf = multinomial_closed_forms(&spec).unwrap();
            check_identities(&cf, spec.dim());
            let trace = cf.f_inv.as_matrix().trace();
            prop_assert!(trace <= cf.trace_bound + 1e-9 * cf.trace_bound);
        }

        #[test]
        fn derivatives_match_finite_differences(theta in prop::collection::vec(-3.0f64..3.0, 1..6)) {
            let theta = DVector::from_vec(theta);
            let m = Multinomial::new(theta.len());
            let g = m.grad(&theta);
            let g_fd = fd_gradient(|t| m.log_partition(t), &theta, 1e-5);
            prop_assert!((&g - &g_fd).norm() <= 1e-5 * (1.0 + g.norm()));
            let h = m.hessian(&theta);
            for i in 0..theta.len() {
                let col = fd_gradient(|t| m.grad(t)[i], &theta, 1e-5);
                for j in 0..theta.len() {
                    prop_assert!((h.as_matrix()[(i, j)] - col[j]).abs() <= 1e-4 * (1.0 + h.as_matrix()[(i, j)].abs()));
                }
            }
        }
    }
}
