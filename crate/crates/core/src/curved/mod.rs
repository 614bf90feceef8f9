//! Curved exponential families `θ = θ(η)`, `η ∈ Ψ ⊂ ℝ^{d₁}`.
//!
//! All local computations are pre-whitened: with `J = F^{1/2}` at `θ₀`,
//! `u_γ = √n·J(θ(η₀ + γ/√n) − θ₀)` and the linearization is `G = J·Dθ(η₀)`,
//! so the base family looks like `J = I`.

mod maps;
mod mle;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

pub use maps::{svec, unsvec, CurvedMap, ElMap, LinearMap, SsemMap, SsemParts, SurMap};
pub use mle::{curved_mle, MleResult, MLE_DEFAULT_STARTS};

use crate::diagnostics::random_unit;
use crate::el::{EtaDomain, MomentModel, MomentSpec};
use crate::error::{Error, Result};
use crate::expfam::{ExpFamilyModel, ExponentialFamily, Multinomial, MvLinear, MvLinearSpec};
use crate::linalg::{eig_extremes, operator_norm, sym_inverse, SymmetricMatrix};
use crate::local::quadrature::{log_integrate, GridSpec};
use crate::local::{
    alpha_moment_distance, make_summary, DistanceEstimate, DistanceMethod, GaussianReference, LocalDensity, LocalFrame, LocalPosterior, PriorSpec,
    SampleSummary,
};
use crate::rng::seeded_rng;

/// Gram matrices with a smaller eigenvalue are treated as singular.
pub const GRAM_FLOOR: f64 = 1e-10;
/// Injectivity estimates below this are flagged.
pub const INJECTIVITY_FLAG: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

/// A curved map together with its base family, centered at `η₀`.
#[derive(Debug, Clone)]
pub struct CurvedModel {
    pub map: Arc<dyn CurvedMap>,
    pub eta0: DVector<f64>,
    pub frame: Arc<LocalFrame>,
}

impl CurvedModel {
    pub fn new(map: Arc<dyn CurvedMap>, family: Arc<dyn ExponentialFamily>, eta0: DVector<f64>) -> Result<Self> {
        if eta0.len() != map.d1() {
            return Err(Error::DimensionMismatch { expected: map.d1(), found: eta0.len() });
        }
        if family.dim() != map.d() {
            return Err(Error::DimensionMismatch { expected: map.d(), found: family.dim() });
        }
        if map.d1() > map.d() {
            return Err(Error::InvalidSpec("a curved map needs d1 ≤ d".into()));
        }
        let theta0 = map.theta(&eta0)?;
        let frame = LocalFrame::new(ExpFamilyModel::new(family, theta0)?)?;
        Ok(CurvedModel { map, eta0, frame: Arc::new(frame) })
    }

    pub fn d1(&self) -> usize {
        self.map.d1()
    }

    pub fn d(&self) -> usize {
        self.map.d()
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.frame.theta0
    }

    pub fn eta_of_gamma(&self, gamma: &DVector<f64>, n: usize) -> DVector<f64> {
        &self.eta0 + gamma / (n as f64).sqrt()
    }

    /// `θ(η)` if `η ∈ Ψ` and `θ(η) ∈ Θ`.
    pub fn theta_checked(&self, eta: &DVector<f64>) -> Option<DVector<f64>> {
        if !self.map.contains(eta) {
            return None;
        }
        self.map.theta(eta).ok().filter(|t| self.frame.model.in_domain(t))
    }

    /// `u_γ = √n·J(θ(η₀ + γ/√n) − θ₀)`.
    pub fn u_of_gamma(&self, gamma: &DVector<f64>, n: usize) -> Option<DVector<f64>> {
        self.theta_checked(&self.eta_of_gamma(gamma, n)).map(|t| self.frame.u_of_theta(&t, n))
    }

    /// Central-difference `Dθ(η₀)`, `d × d₁`.
    pub fn jacobian_raw(&self) -> Result<DMatrix<f64>> {
        let (d, d1) = (self.d(), self.d1());
        let mut jac = DMatrix::zeros(d, d1);
        for i in 0..d1 {
            let h = FD_STEP * self.eta0[i].abs().max(1.0);
            let mut plus = self.eta0.clone();
            let mut minus = self.eta0.clone();
            plus[i] += h;
            minus[i] -= h;
            match (self.theta_checked(&plus), self.theta_checked(&minus)) {
                (Some(tp), Some(tm)) => jac.set_column(i, &((tp - tm) / (2.0 * h))),
                _ => return Err(Error::PreconditionViolated(format!("eta0 is within {h:e} of the boundary of Psi along axis {i}"))),
            }
        }
        Ok(jac)
    }

    /// Whitened Jacobian `G = J·Dθ(η₀)`.
    pub fn jacobian(&self) -> Result<DMatrix<f64>> {
        Ok(self.frame.j.as_matrix() * self.jacobian_raw()?)
    }

    /// `n` draws of the sufficient statistic at `θ₀`.
    pub fn sample_data(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        self.frame.model.sample_sufficient(&self.frame.theta0, n, seed)
    }
}

/// `(G'G)` with its inverse, checked against the singularity floor.
fn gram_of(g: &DMatrix<f64>) -> Result<(SymmetricMatrix, SymmetricMatrix, (f64, f64))> {
    let gram = SymmetricMatrix::symmetrize(g.transpose() * g);
    let extremes = eig_extremes(&gram);
    if !(extremes.0 >= GRAM_FLOOR) {
        return Err(Error::DegenerateJacobian { min_eigenvalue: extremes.0 });
    }
    let inv = sym_inverse(&gram)?;
    Ok((gram, inv, extremes))
}

/// Fitted linearization `u_γ = r₁ + (I + R₂)Gγ` on the ball `‖γ‖ ≤ κ√d`.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// Whitened `G`, `d × d₁`.
    pub g: DMatrix<f64>,
    /// Unwhitened `Dθ(η₀)`.
    pub g_raw: DMatrix<f64>,
    pub gram: SymmetricMatrix,
    pub gram_inv: SymmetricMatrix,
    pub gram_min: f64,
    pub gram_max: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub kappa: f64,
    pub n: usize,
    /// `δ₁·√d`.
    pub delta1_sqrt_d: f64,
    /// `δ₂·d`.
    pub delta2_d: f64,
}

/// Fits `G`, `δ₁` and `δ₂` for the curved model at sample size `n`.
///
/// The residual `e(γ) = u_γ − Gγ` is split by probing at `‖γ‖ = 10⁻³√d`:
/// its odd part there gives the linear operator `L ≈ R₂G`, so
/// `δ₂ = ‖L·G⁺‖`, and `δ₁` is the largest remaining `‖e(γ) − Lγ‖` over
/// axis endpoints and `gamma_budget` uniform draws from the ball.
pub fn linearize(model: &CurvedModel, n: usize, kappa: f64, gamma_budget: usize, seed: u64) -> Result<Linearization> {
    if n == 0 || !(kappa > 0.0) {
        return Err(Error::InvalidSpec("linearize needs n ≥ 1 and kappa > 0".into()));
    }
    let g_raw = model.jacobian_raw()?;
    let g = model.frame.j.as_matrix() * &g_raw;
    let (gram, gram_inv, (gram_min, gram_max)) = gram_of(&g)?;
    let (d, d1) = (model.d() as f64, model.d1());
    let radius = kappa * d.sqrt();

    let residual = |gamma: &DVector<f64>| -> Result<DVector<f64>> {
        let u = model
            .u_of_gamma(gamma, n)
            .ok_or_else(|| Error::PreconditionViolated(format!("the ball of radius {radius} in gamma maps outside Psi at n = {n}")))?;
        Ok(u - &g * gamma)
    };

    let eps = 1e-3 * d.sqrt();
    let mut lin = DMatrix::zeros(model.d(), d1);
    for i in 0..d1 {
        let e = DVector::from_fn(d1, |k, _| if k == i { eps } else { 0.0 });
        let odd = (residual(&e)? - residual(&(-&e))?) / (2.0 * eps);
        lin.set_column(i, &odd);
    }
    let g_pinv = gram_inv.as_matrix() * g.transpose();
    let delta2 = operator_norm(&(&lin * g_pinv));

    let mut points = Vec::with_capacity(2 * d1 + gamma_budget);
    for i in 0..d1 {
        for sign in [1.0, -1.0] {
            points.push(DVector::from_fn(d1, |k, _| if k == i { sign * radius } else { 0.0 }));
        }
    }
    let mut rng = seeded_rng(seed);
    for _ in 0..gamma_budget {
        let r = radius * rng.random::<f64>().powf(1.0 / d1 as f64);
        points.push(random_unit(d1, &mut rng) * r);
    }
    let mut delta1 = 0.0f64;
    for gamma in &points {
        delta1 = delta1.max((residual(gamma)? - &lin * gamma).norm());
    }

    Ok(Linearization {
        g,
        g_raw,
        gram,
        gram_inv,
        gram_min,
        gram_max,
        delta1,
        delta2,
        kappa,
        n,
        delta1_sqrt_d: delta1 * d.sqrt(),
        delta2_d: delta2 * d,
    })
}

/// Empirical lower estimate of `ε₀` in `‖θ(η) − θ₀‖ ≥ ε₀‖η − η₀‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    pub floor: f64,
    pub worst_eta: DVector<f64>,
    pub flagged: bool,
}

/// Minimizes the ratio over uniform draws from `Ψ`, a shell of shrinking
/// radii around `η₀`, and a local polish of the worst draw. Coordinates are
/// the raw `θ`.
pub fn injectivity_floor(model: &CurvedModel, grid_budget: usize, seed: u64) -> InjectivityReport {
    let map = &model.map;
    let eta0 = &model.eta0;
    let theta0 = model.theta0();
    let ratio = |eta: &DVector<f64>| -> f64 {
        let dist = (eta - eta0).norm();
        if dist <= 1e-12 || !map.contains(eta) {
            return f64::INFINITY;
        }
        match map.theta(eta) {
            Ok(t) => (t - theta0).norm() / dist,
            Err(_) => f64::INFINITY,
        }
    };
    let mut rng = seeded_rng(seed);
    let d1 = model.d1();
    let scale = match map.bounding_box() {
        Some((lo, hi)) => (hi - lo).norm(),
        None => (0..32).map(|_| (map.sample(&mut rng) - eta0).norm()).fold(0.0, f64::max).max(1e-3),
    };
    let uniform = grid_budget.max(1);
    let shell = (grid_budget / 4).max(8);
    let mut best = (f64::INFINITY, eta0.clone());
    let consider = |eta: DVector<f64>, best: &mut (f64, DVector<f64>)| {
        let r = ratio(&eta);
        if r < best.0 {
            *best = (r, eta);
        }
    };
    for _ in 0..uniform {
        let eta = map.sample(&mut rng);
        consider(eta, &mut best);
    }
    for k in 0..shell {
        let r = scale * 10f64.powi(-((k % 4) as i32) - 1);
        let eta = eta0 + random_unit(d1, &mut rng) * r;
        consider(eta, &mut best);
    }
    let mut step = 0.05 * scale;
    for _ in 0..200 {
        let cand = map.project(&(&best.1 + random_unit(d1, &mut rng) * step * rng.random::<f64>()));
        let before = best.0;
        consider(cand, &mut best);
        if best.0 >= before {
            step *= 0.97;
        }
    }
    let floor = if best.0.is_finite() { best.0 } else { 0.0 };
    InjectivityReport { flagged: floor < INJECTIVITY_FLAG, floor, worst_eta: best.1 }
}

/// `(G'G)⁻¹G'√n(x̄ − μ)`; all vectors in whitened coordinates.
pub fn s_statistic(lin: &Linearization, x_bar: &DVector<f64>, mu: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
    s_from(&lin.g, x_bar, mu, n)
}

fn s_from(g: &DMatrix<f64>, x_bar: &DVector<f64>, mu: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
    if x_bar.len() != g.nrows() || mu.len() != g.nrows() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), found: x_bar.len() });
    }
    let (_, gram_inv, _) = gram_of(g)?;
    Ok(gram_inv.as_matrix() * (g.transpose() * ((x_bar - mu) * (n as f64).sqrt())))
}

/// Posterior of `γ = √n(η − η₀)` over `Γ = √n(Ψ − η₀)`, unnormalized.
#[derive(Debug, Clone)]
pub struct CurvedLocalPosterior {
    pub model: CurvedModel,
    /// The base-family posterior sharing the frame, summary and prior.
    pub base: LocalPosterior,
    pub g: DMatrix<f64>,
    pub s: DVector<f64>,
    pub gram_inv: SymmetricMatrix,
}

/// Builds the curved posterior from `n × d` sufficient statistics.
pub fn curved_local_posterior(model: &CurvedModel, prior: PriorSpec, data: &DMatrix<f64>, n: usize) -> Result<CurvedLocalPosterior> {
    let summary = make_summary(&model.frame, data, n)?;
    CurvedLocalPosterior::from_summary(model, prior, summary)
}

impl CurvedLocalPosterior {
    pub fn from_summary(model: &CurvedModel, prior: PriorSpec, summary: SampleSummary) -> Result<Self> {
        let g = model.jacobian()?;
        let (_, gram_inv, _) = gram_of(&g)?;
        // Δₙ = √n·J⁻¹(x̄ − μ) is the whitened normalized mean
        let s = gram_inv.as_matrix() * (g.transpose() * &summary.delta_n);
        let base = LocalPosterior::new(model.frame.clone(), summary, prior);
        Ok(CurvedLocalPosterior { model: model.clone(), base, g, s, gram_inv })
    }

    pub fn n(&self) -> usize {
        self.base.summary.n
    }

    pub fn in_gamma_domain(&self, gamma: &DVector<f64>) -> bool {
        self.model.theta_checked(&self.model.eta_of_gamma(gamma, self.n())).is_some()
    }

    /// `n⟨X̄, θ − θ₀⟩ − n[ψ(θ) − ψ(θ₀)] + ln π(θ)` at `θ = θ(η₀ + γ/√n)`.
    pub fn log_unnormalized(&self, gamma: &DVector<f64>) -> f64 {
        let n = self.n();
        let Some(theta) = self.model.theta_checked(&self.model.eta_of_gamma(gamma, n)) else {
            return f64::NEG_INFINITY;
        };
        let nf = n as f64;
        let frame = &self.model.frame;
        let psi = frame.model.family().log_partition(&theta);
        let ll = nf * self.base.summary.x_bar.dot(&(&theta - &frame.theta0)) - nf * (psi - frame.psi0());
        ll + self.base.prior.log_density(&theta)
    }

    /// `N(s, (G'G)⁻¹)`.
    pub fn reference(&self) -> Result<GaussianReference> {
        GaussianReference::new(self.s.clone(), &self.gram_inv)
    }
}

impl LocalDensity for CurvedLocalPosterior {
    fn dim(&self) -> usize {
        self.model.d1()
    }

    fn log_density(&self, gamma: &DVector<f64>) -> f64 {
        self.log_unnormalized(gamma)
    }
}

/// `∫|π*ₙ(γ) − φ(γ; s, (G'G)⁻¹)| dγ` with the local-analysis estimators.
pub fn curved_tv(cpost: &CurvedLocalPosterior, method: &DistanceMethod, seed: u64) -> Result<DistanceEstimate> {
    alpha_moment_distance(cpost, &cpost.reference()?, 0.0, method, seed)
}

/// Posterior mass outside `B(0, k̄√d)` relative to all of `Γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMass {
    pub ratio: f64,
    /// Change in the ratio on the half-resolution grid.
    pub error: f64,
}

/// Grid integration over a cube holding the bulk of the posterior; `d₁ ≤ 2`.
pub fn tail_mass_audit(cpost: &CurvedLocalPosterior, k_bar: f64, grid: Option<GridSpec>) -> Result<TailMass> {
    let d1 = cpost.model.d1();
    if d1 > 2 {
        return Err(Error::DimensionTooLarge { dim: d1, max: 2 });
    }
    if !(k_bar >= 0.0) {
        return Err(Error::InvalidSpec("k_bar must be nonnegative".into()));
    }
    let spec = grid.unwrap_or_else(|| GridSpec::for_dim(d1));
    spec.validate(d1)?;
    let radius = k_bar * (cpost.model.d() as f64).sqrt();
    let sd = cpost.gram_inv.as_matrix().diagonal().iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
    let mut half = radius.max(cpost.s.norm()) + 12.0 * sd;
    if let Some((lo, hi)) = cpost.model.map.bounding_box() {
        let rn = (cpost.n() as f64).sqrt();
        let extent = (0..d1).map(|i| ((hi[i] - cpost.model.eta0[i]).abs()).max((cpost.model.eta0[i] - lo[i]).abs()) * rn).fold(0.0, f64::max);
        half = half.min(extent);
    }
    let center = DVector::zeros(d1);
    let chol = DMatrix::identity(d1, d1) * (half / spec.radius);
    let run = |spec: &GridSpec| -> Result<f64> {
        let (log_all, _) = log_integrate(spec, &center, &chol, |g| cpost.log_unnormalized(g))?;
        let (log_out, _) = log_integrate(spec, &center, &chol, |g| if g.norm() > radius { cpost.log_unnormalized(g) } else { f64::NEG_INFINITY })?;
        if log_all == f64::NEG_INFINITY {
            return Err(Error::PreconditionViolated("posterior has no mass on the grid".into()));
        }
        Ok(if log_out == f64::NEG_INFINITY { 0.0 } else { (log_out - log_all).exp().clamp(0.0, 1.0) })
    };
    let ratio = run(&spec)?;
    let coarse = run(&spec.halved())?;
    Ok(TailMass { ratio, error: (ratio - coarse).abs() })
}

/// `ln Zₙ(u_γ)` from the base posterior, for cross-checking `ℓ(γ)`.
pub fn log_z_at_gamma(cpost: &CurvedLocalPosterior, gamma: &DVector<f64>) -> f64 {
    match cpost.model.u_of_gamma(gamma, cpost.n()) {
        Some(u) => cpost.base.log_z(&u),
        None => f64::NEG_INFINITY,
    }
}

/// Two-point support `{0, 1}` with a mean restriction: `θ(η) = logit η` on
/// `Ψ = [0.01, 0.99]`.
pub fn el_mean_toy(eta0: f64) -> Result<CurvedModel> {
    let support = vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
    let domain = EtaDomain::Box { lo: DVector::from_element(1, 0.01), hi: DVector::from_element(1, 0.99) };
    let model = MomentModel::builtin(MomentSpec::Mean, support, domain, None)?;
    el_curved(model, DVector::from_element(1, eta0))
}

/// Curved model of a moment-restricted multinomial on its own support.
pub fn el_curved(model: MomentModel, eta0: DVector<f64>) -> Result<CurvedModel> {
    let d = model.dim();
    CurvedModel::new(Arc::new(ElMap { model }), Arc::new(Multinomial::new(d)), eta0)
}

fn regression_family(d_r: usize, d_c: usize, sigma: &DMatrix<f64>, pi: &DMatrix<f64>, design_rows: usize) -> Result<Arc<MvLinear>> {
    let spec = MvLinearSpec { d_r, d_c, pi: pi.clone(), sigma: sigma.clone(), z: crate::expfam::cosine_design(design_rows, d_c) };
    Ok(Arc::new(MvLinear::new(&spec)?))
}

/// Two equations, two covariates, each covariate in one equation;
/// `Σ = [[1, .3], [.3, 1]]`, `Π = diag(0.5, −0.4)`, `λ_min = 0.25`, `M = 2`.
pub fn sur_toy() -> Result<CurvedModel> {
    let map = SurMap::new(2, 2, vec![vec![true, false], vec![false, true]], 0.25, 2.0)?;
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    let pi = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.4]);
    sur_model(map, &sigma, &pi, 64)
}

pub fn sur_model(map: SurMap, sigma: &DMatrix<f64>, pi: &DMatrix<f64>, design_rows: usize) -> Result<CurvedModel> {
    let eta0 = map.eta_of(sigma, pi)?;
    let family = regression_family(map.d_r, map.d_c, sigma, pi, design_rows)?;
    CurvedModel::new(Arc::new(map), family, eta0)
}

/// `d_r = 2`, one included and one excluded covariate; `β = 0.5`,
/// `γ = 0.3`, `Π₁₂ = 0.2`, `Π₂₂ = 1`, `Σ = [[1, .3], [.3, 1]]`.
pub fn ssem_toy() -> Result<CurvedModel> {
    let map = SsemMap::new(2, 1, 1, 0.25, 3.0)?;
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let eta0 = map.eta_of(&sigma, one(0.2), one(1.0), DVector::from_element(1, 0.3), DVector::from_element(1, 0.5))?;
    let pi = map.split(&eta0).reduced_form();
    let family = regression_family(2, 2, &sigma, &pi, 64)?;
    CurvedModel::new(Arc::new(map), family, eta0)
}

/// `θ(η) = η` on the box `θ₀ ± half_width` over an exponential family.
pub fn identity_embed(model: &ExpFamilyModel, half_width: f64) -> Result<CurvedModel> {
    let theta0 = model.theta0().clone();
    let map = LinearMap::identity(&theta0, half_width)?;
    CurvedModel::new(Arc::new(map), model.family_arc(), theta0)
}

/// Builds a named curved instance.
pub fn curved_by_name(name: &str, base: Option<&ExpFamilyModel>) -> Result<CurvedModel> {
    match name {
        "el-mean" => el_mean_toy(0.3),
        "sur-toy" => sur_toy(),
        "ssem-toy" => ssem_toy(),
        "identity-embed" => {
            let base = base.ok_or_else(|| Error::InvalidSpec("identity-embed needs a base family".into()))?;
            identity_embed(base, 5.0)
        }
        other => Err(Error::InvalidSpec(format!("unknown curved instance '{other}'"))),
    }
}

#[cfg(test)]
mod tests;
