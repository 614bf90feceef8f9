use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{ExpFamilyModel, ExponentialFamily};
use crate::error::{Error, Result};
use crate::linalg::{eig_extremes, SymmetricMatrix};
use crate::rng::Rng;

/// Multivariate linear model `Y = ZΠ + E`, rows of `E` iid `N(0, Σ)`, with
/// a fixed design `Z`.
#[derive(Debug, Clone)]
pub struct MvLinearSpec {
    pub d_r: usize,
    pub d_c: usize,
    /// `d_c × d_r`.
    pub pi: DMatrix<f64>,
    /// `d_r × d_r`.
    pub sigma: DMatrix<f64>,
    /// `n × d_c`.
    pub z: DMatrix<f64>,
}

impl MvLinearSpec {
    /// `Σ = σ²I`, every entry of `Π` equal to `pi`, and a cosine design
    /// whose Gram matrix `ZᵀZ/n` is the identity (first column constant).
    pub fn simple(d_r: usize, d_c: usize, sigma2: f64, pi: f64, n: usize) -> Self {
        MvLinearSpec { d_r, d_c, pi: DMatrix::from_element(d_c, d_r, pi), sigma: DMatrix::identity(d_r, d_r) * sigma2, z: cosine_design(n, d_c) }
    }
}

/// `n × d_c` design: a constant column followed by `√2·cos(2πk(i + ½)/n)`.
pub fn cosine_design(n: usize, d_c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d_c, |i, k| if k == 0 { 1.0 } else { SQRT_2 * (2.0 * std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos() })
}

/// The model in natural coordinates `θ = (θ₁, θ₂) = (−½Σ⁻¹, ΠΣ⁻¹)`.
///
/// `θ₁` is stored as its symmetric vectorization (diagonal entries, then
/// `√2·θ₁ᵢⱼ` for `i < j`), so the coordinate norm is the Frobenius norm and
/// the sufficient statistic pairs with `yᵀθ₁y` exactly. `θ₂` is stored row
/// major.
#[derive(Debug, Clone)]
pub struct MvLinear {
    d_r: usize,
    d_c: usize,
    z: DMatrix<f64>,
    gram: DMatrix<f64>,
    max_row_norm: f64,
}

impl MvLinear {
    pub fn new(spec: &MvLinearSpec) -> Result<Self> {
        let (d_r, d_c) = (spec.d_r, spec.d_c);
        if d_r == 0 || d_c == 0 {
            return Err(Error::InvalidSpec("d_r and d_c must be positive".into()));
        }
        if spec.pi.shape() != (d_c, d_r) {
            return Err(Error::InvalidSpec(format!("Pi must be {d_c}x{d_r}")));
        }
        if spec.z.ncols() != d_c || spec.z.nrows() == 0 {
            return Err(Error::InvalidSpec(format!("Z must have {d_c} columns and at least one row")));
        }
        let sigma = SymmetricMatrix::from_matrix(spec.sigma.clone())?;
        let (lo, _) = eig_extremes(&sigma);
        if !(lo > 0.0) {
            return Err(Error::InvalidSpec(format!("Sigma is not positive definite (min eigenvalue {lo:e})")));
        }
        let n = spec.z.nrows() as f64;
        let gram = SymmetricMatrix::symmetrize(spec.z.transpose() * &spec.z / n);
        let (glo, _) = eig_extremes(&gram);
        if !(glo > 1e-8) {
            return Err(Error::InvalidSpec(format!("design is rank deficient (min eigenvalue of Z'Z/n {glo:e})")));
        }
        let max_row_norm = spec.z.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        Ok(MvLinear { d_r, d_c, z: spec.z.clone(), gram: gram.into_inner(), max_row_norm })
    }

    pub fn d_r(&self) -> usize {
        self.d_r
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn design_gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn max_row_norm(&self) -> f64 {
        self.max_row_norm
    }

    fn sym_len(&self) -> usize {
        self.d_r * (self.d_r + 1) / 2
    }

    /// Splits coordinates into the symmetric `θ₁` and the `d_c × d_r` `θ₂`.
    pub fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let d_r = self.d_r;
        let mut t1 = DMatrix::zeros(d_r, d_r);
        let mut k = 0;
        for i in 0..d_r {
            for j in i..d_r {
                if i == j {
                    t1[(i, i)] = theta[k];
                } else {
                    t1[(i, j)] = theta[k] / SQRT_2;
                    t1[(j, i)] = theta[k] / SQRT_2;
                }
                k += 1;
            }
        }
        let t2 = DMatrix::from_row_slice(self.d_c, d_r, &theta.as_slice()[k..]);
        (t1, t2)
    }

    /// Inverse of [`unpack`](Self::unpack); also maps a matrix gradient
    /// `(∂ψ/∂θ₁, ∂ψ/∂θ₂)` to coordinate gradients.
    pub fn pack(&self, t1: &DMatrix<f64>, t2: &DMatrix<f64>) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for i in 0..self.d_r {
            for j in i..self.d_r {
                out.push(if i == j { t1[(i, i)] } else { SQRT_2 * 0.5 * (t1[(i, j)] + t1[(j, i)]) });
            }
        }
        for r in 0..self.d_c {
            for c in 0..self.d_r {
                out.push(t2[(r, c)]);
            }
        }
        DVector::from_vec(out)
    }

    /// Natural parameter of `(Π, Σ)`.
    pub fn theta_of(&self, pi: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
        let prec = sigma.clone().cholesky().ok_or_else(|| Error::InvalidSpec("Sigma is not positive definite".into()))?.inverse();
        let prec = SymmetricMatrix::symmetrize(prec).into_inner();
        Ok(self.pack(&(-0.5 * &prec), &(pi * &prec)))
    }

    /// `Σ = −½θ₁⁻¹`, or `None` outside the domain.
    fn covariance(&self, t1: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let neg = Cholesky::new(-t1.clone())?;
        Some(SymmetricMatrix::symmetrize(neg.inverse() * 0.5).into_inner())
    }

    /// Expected per-observation statistic at design row `z`.
    fn row_mean(&self, s: &DMatrix<f64>, t2: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        let m = s * t2.transpose() * z;
        self.statistic(&(s + &m * m.transpose()), &(z * m.transpose()))
    }

    fn statistic(&self, yy: &DMatrix<f64>, zy: &DMatrix<f64>) -> DVector<f64> {
        self.pack(yy, zy)
    }
}

pub fn build_mv_linear(spec: &MvLinearSpec) -> Result<ExpFamilyModel> {
    let fam = MvLinear::new(spec)?;
    let theta0 = fam.theta_of(&spec.pi, &spec.sigma)?;
    ExpFamilyModel::new(Arc::new(fam), theta0)
}

/// `λ_min(Σ)·min{λ_min(ZᵀZ/n), 2λ_min(Σ), 4λ_min(ΠᵀAΠ)}` with `A = ZᵀZ/n`.
pub fn fisher_lower_bound(spec: &MvLinearSpec) -> f64 {
    let n = spec.z.nrows() as f64;
    let a = spec.z.transpose() * &spec.z / n;
    let lmin = |m: DMatrix<f64>| eig_extremes(&SymmetricMatrix::symmetrize(m)).0;
    let ls = lmin(spec.sigma.clone());
    let la = lmin(a.clone());
    let lp = lmin(spec.pi.transpose() * &a * &spec.pi);
    ls * la.min(2.0 * ls).min(4.0 * lp)
}

impl ExponentialFamily for MvLinear {
    fn name(&self) -> &str {
        "mv-linear"
    }

    fn dim(&self) -> usize {
        self.sym_len() + self.d_c * self.d_r
    }

    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        if theta.len() != self.dim() || theta.iter().any(|t| !t.is_finite()) {
            return false;
        }
        Cholesky::new(-self.unpack(theta).0).is_some()
    }

    fn log_partition(&self, theta: &DVector<f64>) -> f64 {
        let (t1, t2) = self.unpack(theta);
        let Some(s) = self.covariance(&t1) else { return f64::INFINITY };
        let quad = (&self.gram * &t2 * &s * t2.transpose()).trace();
        let logdet = Cholesky::new(s).map(|c| 2.0 * c.l().diagonal().map(f64::ln).sum()).unwrap_or(f64::NAN);
        0.5 * quad + 0.5 * logdet
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let (t1, t2) = self.unpack(theta);
        let s = self.covariance(&t1).expect("grad evaluated outside the domain");
        let q = t2.transpose() * &self.gram * &t2;
        let g1 = &s + &s * q * &s;
        let g2 = &self.gram * &t2 * &s;
        self.pack(&g1, &g2)
    }

    fn hessian(&self, theta: &DVector<f64>) -> SymmetricMatrix {
        let (t1, t2) = self.unpack(theta);
        let s = self.covariance(&t1).expect("hessian evaluated outside the domain");
        let a = &self.gram;
        let q = t2.transpose() * a * &t2;
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut e = DVector::zeros(d);
            e[k] = 1.0;
            let (k1, k2) = self.unpack(&e);
            let ds = 2.0 * &s * &k1 * &s;
            let dg1 = &ds + &ds * &q * &s + &s * &q * &ds + &s * k2.transpose() * a * &t2 * &s + &s * t2.transpose() * a * &k2 * &s;
            let dg2 = a * &k2 * &s + a * &t2 * &ds;
            h.set_column(k, &self.pack(&dg1, &dg2));
        }
        SymmetricMatrix::symmetrize(h)
    }

    /// Rows cycle through the design.
    fn sample(&self, theta: &DVector<f64>, count: usize, rng: &mut Rng) -> DMatrix<f64> {
        let (t1, t2) = self.unpack(theta);
        let s = self.covariance(&t1).expect("sample evaluated outside the domain");
        let l = Cholesky::new(s.clone()).expect("covariance is positive definite").l();
        let pi = &t2 * &s;
        let mut x = DMatrix::zeros(count, self.dim());
        let mut eps = DVector::zeros(self.d_r);
        for i in 0..count {
            let z = self.z.row(i % self.z.nrows()).transpose();
            eps.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let y = pi.transpose() * &z + &l * &eps;
            x.set_row(i, &self.statistic(&(&y * y.transpose()), &(&z * y.transpose())).transpose());
        }
        x
    }

    fn sample_centered(&self, theta: &DVector<f64>, count: usize, rng: &mut Rng) -> DMatrix<f64> {
        let (t1, t2) = self.unpack(theta);
        let s = self.covariance(&t1).expect("sample evaluated outside the domain");
        let mut x = self.sample(theta, count, rng);
        for i in 0..count {
            let z = self.z.row(i % self.z.nrows()).transpose();
            let mean = self.row_mean(&s, &t2, &z);
            let mut row = x.row_mut(i);
            row -= mean.transpose();
        }
        x
    }
}
