//! Local parameter space `u = √n·J(θ − θ₀)`: likelihood ratios, the local
//! posterior and distances to its Gaussian approximation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::ExpFamilyModel;
use crate::linalg::{sym_inv_sqrt, sym_sqrt, SymmetricMatrix};

mod distance;
pub mod quadrature;

pub use distance::{
    alpha_moment_distance, m_d_alpha, tv_distance_importance, tv_distance_quadrature, DistanceEstimate, DistanceMethod, GaussianReference,
    LocalDensity,
};
pub use quadrature::GridSpec;

/// Centering objects at the true parameter.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub model: ExpFamilyModel,
    pub theta0: DVector<f64>,
    pub mu: DVector<f64>,
    pub f: SymmetricMatrix,
    pub j: SymmetricMatrix,
    pub j_inv: SymmetricMatrix,
    psi0: f64,
}

impl LocalFrame {
    pub fn new(model: ExpFamilyModel) -> Result<Self> {
        let theta0 = model.theta0().clone();
        let mu = model.grad(&theta0)?;
        let f = model.hessian(&theta0)?;
        let j = sym_sqrt(&f)?;
        let j_inv = sym_inv_sqrt(&f)?;
        let psi0 = model.log_partition(&theta0)?;
        Ok(LocalFrame { model, theta0, mu, f, j, j_inv, psi0 })
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn psi0(&self) -> f64 {
        self.psi0
    }

    /// `θ₀ + J⁻¹u/√n`.
    pub fn theta_of_u(&self, u: &DVector<f64>, n: usize) -> DVector<f64> {
        &self.theta0 + (&self.j_inv * u) / (n as f64).sqrt()
    }

    /// `√n·J(θ − θ₀)`.
    pub fn u_of_theta(&self, theta: &DVector<f64>, n: usize) -> DVector<f64> {
        (&self.j * &(theta - &self.theta0)) * (n as f64).sqrt()
    }
}

/// Data reduction `(n, X̄, Δₙ)` with `Δₙ = √n·J⁻¹(X̄ − μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub x_bar: DVector<f64>,
    pub delta_n: DVector<f64>,
}

impl SampleSummary {
    pub fn from_mean(frame: &LocalFrame, x_bar: DVector<f64>, n: usize) -> Result<Self> {
        if x_bar.len() != frame.dim() {
            return Err(Error::DimensionMismatch { expected: frame.dim(), found: x_bar.len() });
        }
        if n == 0 {
            return Err(Error::InvalidSpec("sample size must be at least 1".into()));
        }
        let delta_n = (&frame.j_inv * &(&x_bar - &frame.mu)) * (n as f64).sqrt();
        Ok(SampleSummary { n, x_bar, delta_n })
    }
}

pub fn make_summary(frame: &LocalFrame, data: &DMatrix<f64>, n: usize) -> Result<SampleSummary> {
    if data.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: data.nrows() });
    }
    if data.ncols() != frame.dim() {
        return Err(Error::DimensionMismatch { expected: frame.dim(), found: data.ncols() });
    }
    SampleSummary::from_mean(frame, data.row_mean().transpose(), n)
}

type LogDensityFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Prior on θ, possibly improper, given by its log-density up to a constant.
#[derive(Clone)]
pub enum PriorSpec {
    Flat,
    /// `log π(θ) = −K‖θ − center‖`.
    Lipschitz {
        k: f64,
        center: DVector<f64>,
    },
    Custom {
        log_density: LogDensityFn,
        lipschitz: Option<f64>,
        sup_log_ratio: Option<f64>,
    },
}

impl fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Flat => write!(f, "Flat"),
            PriorSpec::Lipschitz { k, .. } => write!(f, "Lipschitz {{ k: {k} }}"),
            PriorSpec::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl PriorSpec {
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        match self {
            PriorSpec::Flat => 0.0,
            PriorSpec::Lipschitz { k, center } => -k * (theta - center).norm(),
            PriorSpec::Custom { log_density, .. } => log_density(theta),
        }
    }

    /// Lipschitz constant of the log-density on a ball of the given radius.
    pub fn lipschitz_k(&self, _radius: f64) -> Option<f64> {
        match self {
            PriorSpec::Flat => Some(0.0),
            PriorSpec::Lipschitz { k, .. } => Some(*k),
            PriorSpec::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// Upper bound on `sup_θ ln π(θ)/π(θ₀)`.
    pub fn sup_log_ratio_bound(&self) -> Option<f64> {
        match self {
            PriorSpec::Flat | PriorSpec::Lipschitz { .. } => Some(0.0),
            PriorSpec::Custom { sup_log_ratio, .. } => *sup_log_ratio,
        }
    }
}

/// `⟨u, Δₙ⟩ − ‖u‖²/2`.
pub fn log_z_tilde(summary: &SampleSummary, u: &DVector<f64>) -> f64 {
    u.dot(&summary.delta_n) - 0.5 * u.norm_squared()
}

/// Posterior of the local parameter `u`, unnormalized.
#[derive(Debug, Clone)]
pub struct LocalPosterior {
    pub frame: Arc<LocalFrame>,
    pub summary: SampleSummary,
    pub prior: PriorSpec,
}

impl LocalPosterior {
    pub fn new(frame: Arc<LocalFrame>, summary: SampleSummary, prior: PriorSpec) -> Self {
        LocalPosterior { frame, summary, prior }
    }

    pub fn n(&self) -> usize {
        self.summary.n
    }

    /// `ln Zₙ(u) = √n⟨X̄, J⁻¹u⟩ − n[ψ(θ₀ + J⁻¹u/√n) − ψ(θ₀)]`, `−∞` off the domain.
    pub fn log_z(&self, u: &DVector<f64>) -> f64 {
        let n = self.summary.n as f64;
        let step = &self.frame.j_inv * u;
        let theta = &self.frame.theta0 + &step / n.sqrt();
        if !self.frame.model.in_domain(&theta) {
            return f64::NEG_INFINITY;
        }
        let psi = self.frame.model.family().log_partition(&theta);
        n.sqrt() * self.summary.x_bar.dot(&step) - n * (psi - self.frame.psi0())
    }

    pub fn log_z_tilde(&self, u: &DVector<f64>) -> f64 {
        log_z_tilde(&self.summary, u)
    }

    pub fn log_unnormalized(&self, u: &DVector<f64>) -> f64 {
        let lz = self.log_z(u);
        if lz == f64::NEG_INFINITY {
            return lz;
        }
        lz + self.prior.log_density(&self.frame.theta_of_u(u, self.summary.n))
    }

    /// Gaussian `N(Δₙ, I)`.
    pub fn reference(&self) -> GaussianReference {
        GaussianReference::standard_at(self.summary.delta_n.clone())
    }
}

impl LocalDensity for LocalPosterior {
    fn dim(&self) -> usize {
        self.frame.dim()
    }

    fn log_density(&self, u: &DVector<f64>) -> f64 {
        self.log_unnormalized(u)
    }
}
