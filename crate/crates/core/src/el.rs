//! Moment-restricted multinomials: the constrained maximizer `q(η)` of
//! `Σ w_j log q_j` subject to `Σ q_j m(x_j, η) = 0`, and the induced natural
//! parameter `θ(η)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::diagnostics::random_unit;
use crate::error::{Error, Result};
use crate::expfam::{ExpFamilyModel, Multinomial};
use crate::rng::seeded_rng;
use rand::Rng as _;

pub const GRAD_TOL: f64 = 1e-10;
pub const BOUNDARY_Q: f64 = 1e-12;
const HULL_MARGIN: f64 = 1e-10;
const MAX_NEWTON: usize = 200;
const FALLBACK_STEPS: usize = 50;
const DIVERGED: f64 = 1e10;

pub type MomentFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Parameter set `Ψ` for `η`.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaDomain {
    Box { lo: DVector<f64>, hi: DVector<f64> },
    Ball { center: DVector<f64>, radius: f64 },
}

impl EtaDomain {
    pub fn dim(&self) -> usize {
        match self {
            EtaDomain::Box { lo, .. } => lo.len(),
            EtaDomain::Ball { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, eta: &DVector<f64>) -> bool {
        if eta.len() != self.dim() || eta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            EtaDomain::Box { lo, hi } => eta.iter().zip(lo.iter().zip(hi)).all(|(e, (l, h))| l <= e && e <= h),
            EtaDomain::Ball { center, radius } => (eta - center).norm() <= *radius,
        }
    }

    pub fn center(&self) -> DVector<f64> {
        match self {
            EtaDomain::Box { lo, hi } => (lo + hi) / 2.0,
            EtaDomain::Ball { center, .. } => center.clone(),
        }
    }
}

/// Builtin moment restrictions, addressable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentSpec {
    /// `m(x, η) = x − η`.
    Mean,
    /// `m(x, η) = (x − η, (x − η)² − σ²)` for scalar `x` and known `σ²`.
    Variance { variance: f64 },
    /// `x = (y, w, z)`, `m(x, η) = z·(y − ⟨w, η⟩)`.
    LinearIv { regressors: usize, instruments: usize },
}

impl MomentSpec {
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str| params.get(key).copied().ok_or_else(|| Error::InvalidSpec(format!("moment '{name}' needs parameter '{key}'")));
        let count = |key: &str| -> Result<usize> {
            let v = get(key)?;
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::InvalidSpec(format!("'{key}' must be a positive integer")));
            }
            Ok(v as usize)
        };
        match name {
            "mean" => Ok(MomentSpec::Mean),
            "variance" => {
                let variance = get("variance")?;
                if !(variance > 0.0) {
                    return Err(Error::InvalidSpec("variance must be positive".into()));
                }
                Ok(MomentSpec::Variance { variance })
            }
            "linear-iv" => Ok(MomentSpec::LinearIv { regressors: count("regressors")?, instruments: count("instruments")? }),
            other => Err(Error::InvalidSpec(format!("unknown moment function '{other}'"))),
        }
    }

    /// `(d₁, M)` for support points of dimension `p`.
    fn shape(&self, p: usize) -> Result<(usize, usize)> {
        match *self {
            MomentSpec::Mean => Ok((p, p)),
            MomentSpec::Variance { .. } if p == 1 => Ok((1, 2)),
            MomentSpec::Variance { .. } => Err(Error::InvalidSpec("variance restriction needs scalar support".into())),
            MomentSpec::LinearIv { regressors, instruments } if p == 1 + regressors + instruments => Ok((regressors, instruments)),
            MomentSpec::LinearIv { .. } => Err(Error::DimensionMismatch { expected: 1 + self.iv_width(), found: p }),
        }
    }

    fn iv_width(&self) -> usize {
        match *self {
            MomentSpec::LinearIv { regressors, instruments } => regressors + instruments,
            _ => 0,
        }
    }

    fn function(&self) -> MomentFn {
        match *self {
            MomentSpec::Mean => Arc::new(|x, eta| x - eta),
            MomentSpec::Variance { variance } => Arc::new(move |x, eta| {
                let r = x[0] - eta[0];
                DVector::from_vec(vec![r, r * r - variance])
            }),
            MomentSpec::LinearIv { regressors, instruments } => Arc::new(move |x, eta| {
                let resid = x[0] - x.rows(1, regressors).dot(eta);
                x.rows(1 + regressors, instruments) * resid
            }),
        }
    }
}

/// Finite support, moment function and weights of a moment-restricted
/// multinomial.
#[derive(Clone)]
pub struct MomentModel {
    pub support: Vec<DVector<f64>>,
    pub moment_fn: MomentFn,
    pub d1: usize,
    pub m_dim: usize,
    pub domain: EtaDomain,
    pub weights: Vec<f64>,
}

impl fmt::Debug for MomentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentModel")
            .field("support", &self.support.len())
            .field("d1", &self.d1)
            .field("m_dim", &self.m_dim)
            .field("domain", &self.domain)
            .finish()
    }
}

impl MomentModel {
    pub fn new(
        support: Vec<DVector<f64>>,
        moment_fn: MomentFn,
        d1: usize,
        m_dim: usize,
        domain: EtaDomain,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if support.len() < 2 {
            return Err(Error::InvalidSpec("support needs at least two points".into()));
        }
        let d = support.len() - 1;
        if d1 == 0 || m_dim < d1 || d < m_dim {
            return Err(Error::InvalidSpec(format!("need d ≥ M ≥ d1 ≥ 1, got d = {d}, M = {m_dim}, d1 = {d1}")));
        }
        if domain.dim() != d1 {
            return Err(Error::DimensionMismatch { expected: d1, found: domain.dim() });
        }
        let p = support[0].len();
        if support.iter().any(|x| x.len() != p) {
            return Err(Error::InvalidSpec("support points differ in dimension".into()));
        }
        let weights = match weights {
            Some(w) => {
                check_weights(&w, support.len())?;
                w
            }
            None => vec![1.0 / support.len() as f64; support.len()],
        };
        let probe = moment_fn(&support[0], &domain.center());
        if probe.len() != m_dim || probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!("moment function must return {m_dim} finite values")));
        }
        Ok(MomentModel { support, moment_fn, d1, m_dim, domain, weights })
    }

    pub fn builtin(spec: MomentSpec, support: Vec<DVector<f64>>, domain: EtaDomain, weights: Option<Vec<f64>>) -> Result<Self> {
        let p = support.first().map_or(0, |x| x.len());
        let (d1, m_dim) = spec.shape(p)?;
        MomentModel::new(support, spec.function(), d1, m_dim, domain, weights)
    }

    /// Support size minus one, the dimension of `θ`.
    pub fn dim(&self) -> usize {
        self.support.len() - 1
    }

    /// Rows `m(x_j, η)ᵀ`.
    pub fn moments(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        let rows: Vec<_> = self.support.iter().map(|x| (self.moment_fn)(x, eta).transpose()).collect();
        DMatrix::from_rows(&rows)
    }
}

fn check_weights(w: &[f64], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(Error::DimensionMismatch { expected: len, found: w.len() });
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidSimplex("weights must be nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidSimplex(format!("weights sum to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElStatus {
    Converged,
    Infeasible,
    Boundary,
}

impl ElStatus {
    pub fn label(&self) -> &'static str {
        match self {
            ElStatus::Converged => "converged",
            ElStatus::Infeasible => "infeasible",
            ElStatus::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ELSolution {
    pub q: DVector<f64>,
    /// Dual vector `t` in `q_j = w_j / (1 + tᵀm_j)`.
    pub multiplier: DVector<f64>,
    /// `Σ w_j log q_j`.
    pub objective: f64,
    pub status: ElStatus,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Dual objective never decreased between accepted steps.
    pub dual_monotone: bool,
}

/// Zero-check residuals of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max_j |w_j/q_j − 1 − tᵀm_j|` over positive weights.
    pub stationarity: f64,
    /// `max_k |Σ_j q_j m_k(x_j, η)|`.
    pub feasibility: f64,
    /// `|Σ q_j − 1|`.
    pub simplex: f64,
    /// `min_j q_j` over positive weights.
    pub min_q: f64,
}

impl KktResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.feasibility <= tol && self.simplex <= tol && self.min_q > 0.0
    }
}

/// Does `0` lie in the interior of the hull of the rows of `m`, by margin?
///
/// Maximizes `s` over `λ ≥ s`, `Σλ = 1`, `Σ λ_j m_j = 0`; interior iff the
/// rows span and `s > margin`.
pub fn zero_in_hull_interior(m: &DMatrix<f64>, margin: f64) -> Result<bool> {
    if m.nrows() <= m.ncols() || m.clone().svd(false, false).rank(1e-10 * m.norm().max(1.0)) < m.ncols() {
        return Ok(false);
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let s = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let lam: Vec<_> = (0..m.nrows()).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    for k in 0..m.ncols() {
        let terms: Vec<_> = lam.iter().enumerate().map(|(j, &v)| (v, m[(j, k)])).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, 0.0);
    }
    let ones: Vec<_> = lam.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
    for &v in &lam {
        lp.add_constraint([(v, 1.0), (s, -1.0)].as_slice(), ComparisonOp::Ge, 0.0);
    }
    match lp.solve() {
        Ok(outcome) => match outcome.solution() {
            Some(sol) => Ok(sol.var_value(s) > margin),
            None => Err(Error::Infeasible("interiority test interrupted".into())),
        },
        Err(microlp::Error::Infeasible) => Ok(false),
        Err(e) => Err(Error::Infeasible(format!("interiority test failed: {e}"))),
    }
}

/// Dual state at `t`: `h(t) = Σ w log(1 + tᵀm)`, its gradient and Hessian
/// (negated). `None` when some `1 + tᵀm_j ≤ 0`.
fn dual(m: &DMatrix<f64>, w: &[f64], t: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let r = m * t;
    let k = m.ncols();
    let (mut h, mut g, mut hess) = (0.0, DVector::zeros(k), DMatrix::zeros(k, k));
    for j in 0..m.nrows() {
        let rj = 1.0 + r[j];
        if !(rj > 0.0) {
            return None;
        }
        let mj = m.row(j).transpose();
        h += w[j] * rj.ln();
        g += &mj * (w[j] / rj);
        hess.ger(w[j] / (rj * rj), &mj, &mj, 1.0);
    }
    Some((h, g, hess))
}

fn solve_dual(m: &DMatrix<f64>, w: &[f64]) -> (DVector<f64>, usize, f64, bool, bool) {
    let mut t = DVector::zeros(m.ncols());
    let (mut h, mut g, mut hess) = dual(m, w, &t).expect("t = 0 is dual feasible");
    let mut monotone = true;
    let mut iterations = 0;
    let mut fallback_left = FALLBACK_STEPS;
    while iterations < MAX_NEWTON + FALLBACK_STEPS {
        let gn = g.norm();
        if gn <= 1e-15 {
            break;
        }
        if t.norm() > DIVERGED {
            return (t, iterations, gn, monotone, true);
        }
        iterations += 1;
        let newton = hess.clone().cholesky().map(|c| c.solve(&g));
        let mut tried_newton = newton.is_some();
        let mut dir = newton.unwrap_or_else(|| g.clone());
        let mut accepted = false;
        loop {
            let slope = g.dot(&dir);
            let mut alpha = 1.0;
            while alpha > 1e-14 {
                let cand = &t + &dir * alpha;
                if let Some((hc, gc, hc_mat)) = dual(m, w, &cand) {
                    // near the optimum h changes below roundoff; fall back on the gradient
                    let flat = hc >= h - 1e-14 * h.abs().max(1.0);
                    if hc >= h + 1e-4 * alpha * slope || (flat && gc.norm() < gn) {
                        monotone &= hc >= h - 1e-12 * h.abs().max(1.0);
                        t = cand;
                        h = hc;
                        g = gc;
                        hess = hc_mat;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted || !tried_newton || fallback_left == 0 {
                break;
            }
            // Newton stalled: gradient ascent steps
            fallback_left -= 1;
            tried_newton = false;
            dir = g.clone();
        }
        if !accepted {
            break;
        }
    }
    let diverged = t.norm() > DIVERGED;
    (t, iterations, g.norm(), monotone, diverged)
}

/// Solves the dual and classifies the result without erroring on
/// infeasibility or boundary solutions.
pub fn solve_el(model: &MomentModel, eta: &DVector<f64>, weights: Option<&[f64]>) -> Result<ELSolution> {
    if eta.len() != model.d1 {
        return Err(Error::DimensionMismatch { expected: model.d1, found: eta.len() });
    }
    if !model.domain.contains(eta) {
        return Err(Error::OutOfDomain);
    }
    let w = match weights {
        Some(w) => {
            check_weights(w, model.support.len())?;
            w
        }
        None => model.weights.as_slice(),
    };
    let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    let all = model.moments(eta);
    let m = all.select_rows(&active);
    let wa: Vec<f64> = active.iter().map(|&j| w[j]).collect();
    let size = model.support.len();

    let infeasible = |iterations| ELSolution {
        q: DVector::from_element(size, f64::NAN),
        multiplier: DVector::from_element(model.m_dim, f64::NAN),
        objective: f64::NAN,
        status: ElStatus::Infeasible,
        iterations,
        grad_norm: f64::NAN,
        dual_monotone: true,
    };
    if !zero_in_hull_interior(&m, HULL_MARGIN)? {
        return Ok(infeasible(0));
    }
    let (t, iterations, grad_norm, dual_monotone, diverged) = solve_dual(&m, &wa);
    if diverged {
        return Ok(infeasible(iterations));
    }
    let r = &all * &t;
    let q = DVector::from_iterator(size, (0..size).map(|j| if w[j] > 0.0 { w[j] / (1.0 + r[j]) } else { 0.0 }));
    let objective = active.iter().map(|&j| w[j] * q[j].ln()).sum();
    let min_q = active.iter().map(|&j| q[j]).fold(f64::INFINITY, f64::min);
    let status = if grad_norm > GRAD_TOL || active.iter().any(|&j| !(1.0 + r[j] > 0.0)) {
        ElStatus::Infeasible
    } else if min_q < BOUNDARY_Q {
        ElStatus::Boundary
    } else {
        ElStatus::Converged
    };
    Ok(ELSolution { q, multiplier: t, objective, status, iterations, grad_norm, dual_monotone })
}

/// `q(η)`; errors unless the solver converged to an interior point.
pub fn profile_q(model: &MomentModel, eta: &DVector<f64>, weights: Option<&[f64]>) -> Result<ELSolution> {
    let sol = solve_el(model, eta, weights)?;
    match sol.status {
        ElStatus::Converged => Ok(sol),
        ElStatus::Infeasible => Err(Error::Infeasible(format!("0 is not interior to the hull of the moment vectors at η = {:?}", eta.as_slice()))),
        ElStatus::Boundary => Err(Error::BoundaryDegenerate { min_q: sol.q.min() }),
    }
}

pub fn kkt_residuals(model: &MomentModel, eta: &DVector<f64>, weights: Option<&[f64]>, sol: &ELSolution) -> KktResiduals {
    let w = weights.unwrap_or(&model.weights);
    let m = model.moments(eta);
    let r = &m * &sol.multiplier;
    let mut out = KktResiduals { stationarity: 0.0, feasibility: 0.0, simplex: (sol.q.sum() - 1.0).abs(), min_q: f64::INFINITY };
    for j in (0..w.len()).filter(|&j| w[j] > 0.0) {
        out.stationarity = out.stationarity.max((w[j] / sol.q[j] - 1.0 - r[j]).abs());
        out.min_q = out.min_q.min(sol.q[j]);
    }
    out.feasibility = (m.transpose() * &sol.q).amax();
    out
}

/// `θ_j(η) = log(q_j(η)/q₀(η))`, `j = 1..d`.
pub fn theta_of_eta(model: &MomentModel, eta: &DVector<f64>) -> Result<DVector<f64>> {
    theta_from_q(&profile_q(model, eta, None)?.q)
}

fn theta_from_q(q: &DVector<f64>) -> Result<DVector<f64>> {
    let min_q = q.min();
    if !(min_q >= BOUNDARY_Q) {
        return Err(Error::BoundaryDegenerate { min_q });
    }
    Ok(DVector::from_iterator(q.len() - 1, q.iter().skip(1).map(|qj| (qj / q[0]).ln())))
}

/// Multinomial at `θ(η)`, the point of the curved family indexed by `η`.
pub fn el_multinomial(model: &MomentModel, eta: &DVector<f64>) -> Result<ExpFamilyModel> {
    let q = profile_q(model, eta, None)?.q;
    let total = q.sum();
    Multinomial::from_probs(&q.iter().map(|v| v / total).collect::<Vec<_>>())
}

/// `Dθ(η)` by implicit differentiation of the dual stationarity condition;
/// `∂m/∂η` by central differences.
pub fn theta_jacobian(model: &MomentModel, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let sol = profile_q(model, eta, None)?;
    let t = &sol.multiplier;
    let w = &model.weights;
    let (size, k, d1) = (model.support.len(), model.m_dim, model.d1);
    let m = model.moments(eta);
    let r: Vec<f64> = (0..size).map(|j| 1.0 + m.row(j).transpose().dot(t)).collect();
    // Dm_j: M × d1
    let dm: Vec<DMatrix<f64>> =
        model.support.iter().map(|x| crate::expfam::fd_jacobian(|e| (model.moment_fn)(x, e), eta, 1e-6 * eta.amax().max(1.0))).collect();
    let mut hess = DMatrix::zeros(k, k);
    let mut g_eta = DMatrix::zeros(k, d1);
    for j in (0..size).filter(|&j| w[j] > 0.0) {
        let mj = m.row(j).transpose();
        hess.ger(w[j] / (r[j] * r[j]), &mj, &mj, 1.0);
        let t_dm = t.transpose() * &dm[j];
        g_eta += (&dm[j] / r[j] - &mj * t_dm * (1.0 / (r[j] * r[j]))) * w[j];
    }
    let dt = hess.cholesky().ok_or(Error::DegenerateJacobian { min_eigenvalue: 0.0 })?.solve(&g_eta);
    let dlogq = |j: usize| -(m.row(j) * &dt + t.transpose() * &dm[j]) / r[j];
    let base = dlogq(0);
    let rows: Vec<_> = (1..size).map(|j| dlogq(j) - &base).collect();
    Ok(DMatrix::from_rows(&rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessProbe {
    pub jacobian_fd: DMatrix<f64>,
    /// `max ‖θ(η) − θ(η₀) − Dθ·(η − η₀)‖` over the probed points.
    pub max_secant_deviation: f64,
}

/// Finite-difference Jacobian of `θ(·)` at `eta0` and the largest departure
/// from its linearization over the axis endpoints of the ball plus `samples`
/// uniform points inside it.
pub fn el_smoothness_probe(model: &MomentModel, eta0: &DVector<f64>, radius: f64, samples: usize, seed: u64) -> Result<SmoothnessProbe> {
    if !(radius > 0.0) {
        return Err(Error::InvalidSpec("probe radius must be positive".into()));
    }
    let d1 = model.d1;
    let mut points: Vec<DVector<f64>> = Vec::new();
    for i in 0..d1 {
        for s in [-1.0, 1.0] {
            let mut e = DVector::zeros(d1);
            e[i] = s * radius;
            points.push(e);
        }
    }
    let mut rng = seeded_rng(seed);
    for _ in 0..samples {
        let r = radius * rng.random::<f64>().powf(1.0 / d1 as f64);
        points.push(random_unit(d1, &mut rng) * r);
    }
    for p in &points {
        if !model.domain.contains(&(eta0 + p)) {
            return Err(Error::PreconditionViolated(format!("probe ball of radius {radius} leaves the η domain")));
        }
    }
    let theta0 = theta_of_eta(model, eta0)?;
    let h = 1e-4 * radius.min(1.0);
    let mut cols = Vec::with_capacity(d1);
    for i in 0..d1 {
        let (mut a, mut b) = (eta0.clone(), eta0.clone());
        a[i] += h;
        b[i] -= h;
        cols.push((theta_of_eta(model, &a)? - theta_of_eta(model, &b)?) / (2.0 * h));
    }
    let jac = DMatrix::from_columns(&cols);
    let mut worst: f64 = 0.0;
    for p in &points {
        let th = theta_of_eta(model, &(eta0 + p))?;
        worst = worst.max((th - &theta0 - &jac * p).norm());
    }
    Ok(SmoothnessProbe { jacobian_fd: jac, max_secant_deviation: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_support(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_vec(vec![x])).collect()
    }

    fn two_point() -> MomentModel {
        let dom = EtaDomain::Box { lo: DVector::from_vec(vec![0.01]), hi: DVector::from_vec(vec![1.5]) };
        MomentModel::builtin(MomentSpec::Mean, scalar_support(&[0.0, 1.0]), dom, None).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn two_point_matches_brute_force() {
        let sol = profile_q(&two_point(), &v(&[0.3]), None).unwrap();
        // simplex grid at resolution 1e-4, keeping points that meet the constraint
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 1..10_000 {
            let q1 = i as f64 * 1e-4;
            if (q1 - 0.3).abs() < 5e-5 {
                let obj = 0.5 * (1.0 - q1).ln() + 0.5 * q1.ln();
                if obj > best.0 {
                    best = (obj, q1);
                }
            }
        }
        assert_abs_diff_eq!(sol.q[1], best.1, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.q[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(theta_of_eta(&two_point(), &v(&[0.3])).unwrap()[0], (3.0f64 / 7.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(theta_of_eta(&two_point(), &v(&[0.5])).unwrap()[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_three_point() {
        let dom = EtaDomain::Ball { center: v(&[0.0]), radius: 0.9 };
        let model = MomentModel::builtin(MomentSpec::Mean, scalar_support(&[-1.0, 0.0, 1.0]), dom, None).unwrap();
        let sol = profile_q(&model, &v(&[0.0]), None).unwrap();
        assert_abs_diff_eq!(sol.q, DVector::from_element(3, 1.0 / 3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(sol.multiplier[0], 0.0, epsilon = 1e-12);
        assert_eq!(sol.status, ElStatus::Converged);
    }

    #[test]
    fn infeasible_mean() {
        assert!(matches!(profile_q(&two_point(), &v(&[1.5]), None), Err(Error::Infeasible(_))));
        assert!(matches!(profile_q(&two_point(), &v(&[2.0]), None), Err(Error::OutOfDomain)));
        let status = solve_el(&two_point(), &v(&[1.5]), None).unwrap().status;
        assert_eq!(status, ElStatus::Infeasible);
    }

    #[test]
    fn hull_interiority() {
        let m = DMatrix::from_row_slice(3, 1, &[-1.0, 0.5, 2.0]);
        assert!(zero_in_hull_interior(&m, 1e-10).unwrap());
        let m = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 2.0]);
        assert!(!zero_in_hull_interior(&m, 1e-10).unwrap());
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        assert!(!zero_in_hull_interior(&m, 1e-10).unwrap());
    }

    #[test]
    fn weights_satisfying_constraints_are_returned() {
        let dom = EtaDomain::Ball { center: v(&[0.0]), radius: 2.0 };
        let w = vec![0.2, 0.3, 0.5];
        let xs = scalar_support(&[-1.0, 0.0, 1.0]);
        let mean = -0.2 + 0.5;
        let model = MomentModel::builtin(MomentSpec::Mean, xs, dom, Some(w.clone())).unwrap();
        let sol = profile_q(&model, &v(&[mean]), None).unwrap();
        assert_abs_diff_eq!(sol.q, DVector::from_vec(w), epsilon = 1e-10);
        assert!(sol.multiplier.norm() < 1e-10);
    }

    #[test]
    fn overidentified_variance_restriction() {
        let xs = scalar_support(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let dom = EtaDomain::Box { lo: v(&[-0.5]), hi: v(&[0.5]) };
        let model = MomentModel::builtin(MomentSpec::Variance { variance: 1.5 }, xs, dom, None).unwrap();
        for eta in [-0.3, 0.0, 0.2] {
            let sol = profile_q(&model, &v(&[eta]), None).unwrap();
            let kkt = kkt_residuals(&model, &v(&[eta]), None, &sol);
            assert!(kkt.within(1e-8), "{kkt:?}");
            assert!(sol.dual_monotone);
            let emb = el_multinomial(&model, &v(&[eta])).unwrap();
            let theta = theta_of_eta(&model, &v(&[eta])).unwrap();
            assert_abs_diff_eq!(emb.theta0().clone(), theta.clone(), epsilon = 1e-10);
            let mean = emb.grad(&theta).unwrap();
            assert_abs_diff_eq!(mean, sol.q.rows(1, 4).into_owned(), epsilon = 1e-10);
        }
    }

    #[test]
    fn linear_iv_recovers_weights_at_truth() {
        // y = 2w exactly, instruments (1, w): residual vanishes at η = 2
        let xs: Vec<_> = [-1.0, 0.0, 1.0, 2.0].iter().map(|&w| v(&[2.0 * w + 0.1 * w * w - 0.05, w, 1.0, w])).collect();
        let dom = EtaDomain::Box { lo: v(&[1.0]), hi: v(&[3.0]) };
        let spec = MomentSpec::from_name("linear-iv", &[("regressors".to_string(), 1.0), ("instruments".to_string(), 2.0)].into()).unwrap();
        let model = MomentModel::builtin(spec, xs, dom, None).unwrap();
        assert_eq!((model.d1, model.m_dim), (1, 2));
        let sol = profile_q(&model, &v(&[2.1]), None).unwrap();
        assert!(kkt_residuals(&model, &v(&[2.1]), None, &sol).within(1e-8));
        assert!(MomentSpec::from_name("nope", &BTreeMap::new()).is_err());
        assert!(MomentSpec::from_name("variance", &BTreeMap::new()).is_err());
    }

    #[test]
    fn smoothness_probe_two_point() {
        let model = two_point();
        let p = el_smoothness_probe(&model, &v(&[0.5]), 0.1, 64, 3).unwrap();
        assert_abs_diff_eq!(p.jacobian_fd[(0, 0)], 4.0, epsilon = 1e-6);
        // logit(½ + h) = 4h + (16/3)h³ + …
        let taylor = 16.0 / 3.0 * 0.1f64.powi(3);
        assert!(p.max_secant_deviation > taylor / 2.0 && p.max_secant_deviation < taylor * 2.0, "{p:?}");
        let jac = theta_jacobian(&model, &v(&[0.5])).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn smoothness_probe_linear_map() {
        // m(x, η) = x − logistic(η) on {0, 1} gives θ(η) = η
        let moment: MomentFn = Arc::new(|x, eta| DVector::from_vec(vec![x[0] - 1.0 / (1.0 + (-eta[0]).exp())]));
        let dom = EtaDomain::Box { lo: v(&[-2.0]), hi: v(&[2.0]) };
        let model = MomentModel::new(scalar_support(&[0.0, 1.0]), moment, 1, 1, dom, None).unwrap();
        let p = el_smoothness_probe(&model, &v(&[0.3]), 1.0, 16, 1).unwrap();
        assert!(p.max_secant_deviation < 1e-9, "{p:?}");
        assert_abs_diff_eq!(p.jacobian_fd[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn implicit_jacobian_matches_finite_differences() {
        let xs = scalar_support(&[-2.0, -0.5, 0.3, 1.0, 2.5]);
        let dom = EtaDomain::Box { lo: v(&[-0.4]), hi: v(&[0.4]) };
        let model = MomentModel::builtin(MomentSpec::Variance { variance: 1.8 }, xs, dom, None).unwrap();
        let eta = v(&[0.1]);
        let fd = el_smoothness_probe(&model, &eta, 0.05, 4, 2).unwrap().jacobian_fd;
        let jac = theta_jacobian(&model, &eta).unwrap();
        assert_abs_diff_eq!(jac, fd, epsilon = 1e-6);
    }

    #[test]
    fn model_validation() {
        let dom = EtaDomain::Box { lo: v(&[0.0]), hi: v(&[1.0]) };
        assert!(MomentModel::builtin(MomentSpec::Variance { variance: 1.0 }, scalar_support(&[0.0, 1.0]), dom.clone(), None).is_err());
        assert!(matches!(
            MomentModel::builtin(MomentSpec::Mean, scalar_support(&[0.0, 1.0]), dom, Some(vec![0.6, 0.6])),
            Err(Error::InvalidSimplex(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kkt_holds_on_random_mean_models(xs in prop::collection::vec(-3.0f64..3.0, 3..8), frac in 0.1f64..0.9,
                                           raw_w in prop::collection::vec(0.05f64..1.0, 8)) {
            let mut xs = xs;
            xs.sort_by(f64::total_cmp);
            prop_assume!(xs.windows(2).all(|p| p[1] - p[0] > 1e-3));
            let (lo, hi) = (xs[0], xs[xs.len() - 1]);
            let eta = lo + frac * (hi - lo);
            let w: Vec<f64> = raw_w[..xs.len()].to_vec();
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / total).collect();
            let dom = EtaDomain::Box { lo: v(&[lo]), hi: v(&[hi]) };
            let model = MomentModel::builtin(MomentSpec::Mean, scalar_support(&xs), dom, Some(w)).unwrap();
            let sol = profile_q(&model, &v(&[eta]), None).unwrap();
            prop_assert!(sol.dual_monotone);
            prop_assert!((sol.q.sum() - 1.0).abs() < 1e-10);
            let kkt = kkt_residuals(&model, &v(&[eta]), None, &sol);
            prop_assert!(kkt.within(1e-8), "{:?}", kkt);
        }
    }
}
