use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use super::quadrature::{log_sum_exp, Grid, GridSpec};
use crate::error::{Error, Result};
use crate::linalg::SymmetricMatrix;
use crate::par;
use crate::rng::{seeded_rng, stream_seed};

const IS_CHUNK: usize = 4096;
const MIN_ESS_FRACTION: f64 = 0.005;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// An unnormalized log-density on local coordinates.
pub trait LocalDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, u: &DVector<f64>) -> f64;
}

/// `N(mean, LLᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianReference {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
    log_det_chol: f64,
}

impl GaussianReference {
    pub fn standard_at(mean: DVector<f64>) -> Self {
        let d = mean.len();
        GaussianReference { mean, chol: DMatrix::identity(d, d), log_det_chol: 0.0 }
    }

    pub fn new(mean: DVector<f64>, cov: &SymmetricMatrix) -> Result<Self> {
        if cov.order() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: cov.order() });
        }
        let chol = cov
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveSemidefinite { min_eigenvalue: crate::linalg::eig_extremes(cov).0 })?
            .l();
        let log_det_chol = chol.diagonal().map(f64::ln).sum();
        Ok(GaussianReference { mean, chol, log_det_chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalized log-density.
    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let w = self.chol.solve_lower_triangular(&(x - &self.mean)).expect("triangular factor is nonsingular");
        -0.5 * w.norm_squared() - self.log_det_chol - 0.5 * self.dim() as f64 * LN_2PI
    }
}

impl LocalDensity for GaussianReference {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, u: &DVector<f64>) -> f64 {
        self.log_pdf(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceMethod {
    Quadrature(GridSpec),
    Importance { budget: usize },
}

/// A distance estimate. For quadrature `error` is an absolute error bound;
/// for importance sampling it is a standard error and `ess` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub value: f64,
    pub error: f64,
    pub ess: Option<f64>,
}

/// `(d + α)(1 + α·ln(d + α)/(d + α))`.
pub fn m_d_alpha(d: usize, alpha: f64) -> f64 {
    let s = d as f64 + alpha;
    s * (1.0 + alpha * s.ln() / s)
}

/// `∫|p(u) − φ(u)| du` by quadrature, `p` normalized on the grid.
pub fn tv_distance_quadrature<T: LocalDensity + ?Sized>(target: &T, reference: &GaussianReference, grid: &GridSpec) -> Result<DistanceEstimate> {
    alpha_moment_distance(target, reference, 0.0, &DistanceMethod::Quadrature(*grid), 0)
}

/// `∫|p(u) − φ(u)| du` by self-normalized importance sampling.
pub fn tv_distance_importance<T: LocalDensity + ?Sized>(
    target: &T,
    reference: &GaussianReference,
    budget: usize,
    seed: u64,
) -> Result<DistanceEstimate> {
    alpha_moment_distance(target, reference, 0.0, &DistanceMethod::Importance { budget }, seed)
}

/// `∫‖u‖^α |p(u) − φ(u)| du`. `alpha = 0` is total variation (without the
/// conventional factor ½).
pub fn alpha_moment_distance<T: LocalDensity + ?Sized>(
    target: &T,
    reference: &GaussianReference,
    alpha: f64,
    method: &DistanceMethod,
    seed: u64,
) -> Result<DistanceEstimate> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidSpec(format!("alpha must be nonnegative, got {alpha}")));
    }
    if target.dim() != reference.dim() {
        return Err(Error::DimensionMismatch { expected: reference.dim(), found: target.dim() });
    }
    match method {
        DistanceMethod::Quadrature(spec) => quadrature(target, reference, alpha, spec),
        DistanceMethod::Importance { budget } => importance(target, reference, alpha, *budget, seed),
    }
}

fn weight(u: &DVector<f64>, alpha: f64) -> f64 {
    if alpha == 0.0 {
        1.0
    } else {
        u.norm().powf(alpha)
    }
}

fn quadrature_once<T: LocalDensity + ?Sized>(target: &T, reference: &GaussianReference, alpha: f64, spec: &GridSpec) -> Result<f64> {
    let grid = Grid::new(spec, &reference.mean, &reference.chol);
    let d = reference.dim() as f64;
    let h = 2.0 * spec.radius / spec.nodes as f64;
    let ln_cell = d * h.ln();
    let nodes = grid.map(|w, u| (target.log_density(u), -0.5 * w.norm_squared() - 0.5 * d * LN_2PI + ln_cell, weight(u, alpha)));
    let lp: Vec<f64> = nodes.iter().map(|t| t.0).collect();
    let lse = log_sum_exp(&lp);
    if !lse.is_finite() {
        return Err(Error::PreconditionViolated("target has no finite mass on the quadrature grid".into()));
    }
    Ok(nodes.iter().map(|&(l, q, c)| ((l - lse).exp() - q.exp()).abs() * c).sum())
}

fn quadrature<T: LocalDensity + ?Sized>(target: &T, reference: &GaussianReference, alpha: f64, spec: &GridSpec) -> Result<DistanceEstimate> {
    spec.validate(reference.dim())?;
    let fine = quadrature_once(target, reference, alpha, spec)?;
    let coarse = quadrature_once(target, reference, alpha, &spec.halved())?;
    let tail = gaussian_tail_bound(reference, alpha, spec.radius);
    Ok(DistanceEstimate { value: fine, error: (fine - coarse).abs() + tail, ess: None })
}

/// Twice the reference's `‖u‖^α`-weighted mass outside the whitened cube,
/// bounded by Cauchy–Schwarz.
fn gaussian_tail_bound(reference: &GaussianReference, alpha: f64, radius: f64) -> f64 {
    let d = reference.dim() as f64;
    let outside = (d * erfc(radius / std::f64::consts::SQRT_2)).min(1.0);
    if alpha == 0.0 {
        return 2.0 * outside;
    }
    let l_norm = crate::linalg::operator_norm(&reference.chol);
    let w_moment = (alpha * 2f64.ln() + ln_gamma(d / 2.0 + alpha) - ln_gamma(d / 2.0)).exp();
    let c = 2f64.powf((2.0 * alpha - 1.0).max(0.0));
    let moment = c * (reference.mean.norm().powf(2.0 * alpha) + l_norm.powf(2.0 * alpha) * w_moment);
    2.0 * (moment * outside).sqrt()
}

fn importance<T: LocalDensity + ?Sized>(target: &T, reference: &GaussianReference, alpha: f64, budget: usize, seed: u64) -> Result<DistanceEstimate> {
    if budget < 1000 {
        return Err(Error::InvalidSpec(format!("importance budget must be at least 1000, got {budget}")));
    }
    let d = reference.dim();
    let df = d as f64;
    // proposal N(0, 2I) in whitened coordinates
    let draws: Vec<(f64, f64, f64)> = par::map_chunks(budget, IS_CHUNK, |chunk, _, len| {
        let mut rng = seeded_rng(stream_seed(seed, chunk));
        let mut out = Vec::with_capacity(len);
        let mut w = DVector::zeros(d);
        for _ in 0..len {
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std::f64::consts::SQRT_2 * z;
            }
            let u = &reference.mean + &reference.chol * &w;
            let r2 = w.norm_squared();
            let log_g = -0.25 * r2 - 0.5 * df * (LN_2PI + 2f64.ln());
            let log_phi = -0.5 * r2 - 0.5 * df * LN_2PI;
            out.push((target.log_density(&u) - log_g, log_phi - log_g, weight(&u, alpha)));
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();

    let n = draws.len() as f64;
    let m = draws.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights { ess: 0.0, budget });
    }
    let r: Vec<f64> = draws.iter().map(|t| (t.0 - m).exp()).collect();
    let sum_r: f64 = r.iter().sum();
    let sum_r2: f64 = r.iter().map(|v| v * v).sum();
    let ess = sum_r * sum_r / sum_r2;
    if ess < MIN_ESS_FRACTION * n {
        return Err(Error::DegenerateWeights { ess, budget });
    }
    let z = sum_r / n;
    let mut a = Vec::with_capacity(draws.len());
    let mut dt_dz = 0.0;
    for (ri, &(_, lb, c)) in r.iter().zip(&draws) {
        let diff = ri / z - lb.exp();
        a.push(diff.abs() * c);
        dt_dz -= diff.signum() * c * ri / (z * z);
    }
    dt_dz /= n;
    let t = a.iter().sum::<f64>() / n;
    let var = a.iter().zip(&r).map(|(ai, ri)| (ai - t + dt_dz * (ri - z)).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(DistanceEstimate { value: t, error: (var / n).sqrt(), ess: Some(ess) })
}
