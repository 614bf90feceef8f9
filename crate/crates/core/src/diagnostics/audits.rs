//! Numerical audits of the likelihood-ratio inequalities on the local
//! parameter space. All audits use exact-enumeration moment bounds.

use nalgebra::{DMatrix, DVector};

use super::{b1n, b2n, lambda_n, random_unit, MomentBudgets, MomentMethod};
use crate::error::{Error, Result};
use crate::local::quadrature::{integrate, log_sum_exp, Grid, GridSpec, MAX_QUADRATURE_DIM};
use crate::local::LocalPosterior;
use crate::par;
use crate::rng::{seeded_rng, stream_seed};
use rand::Rng as _;

const AUDIT_DIM: usize = 2;
const SLACK: f64 = 1e-10;
const U_CHUNK: usize = 1024;

/// Outcome of the pointwise audit on a ball of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub c: f64,
    pub lambda: f64,
    pub samples: usize,
    /// `max |ln Z − ln Z̃| − λ‖u‖²` over the samples.
    pub max_slack: f64,
    /// `max ln Z − ⟨Δ, u⟩ + ½‖u‖²(1 − 2λ)` over the samples.
    pub max_slack_upper: f64,
    pub violations: usize,
    pub violations_upper: usize,
}

impl Lemma1Report {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.violations_upper == 0
    }
}

/// `lhs ≤ rhs + error`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub error: f64,
    pub holds: bool,
}

impl LemmaCheck {
    fn new(lhs: f64, rhs: f64, error: f64) -> Self {
        LemmaCheck { lhs, rhs, error, holds: lhs <= rhs + error }
    }
}

fn exact_lambda(post: &LocalPosterior, c: f64, budgets: &MomentBudgets, seed: u64) -> Result<f64> {
    let (frame, n, d) = (post.frame.as_ref(), post.n(), post.frame.dim());
    let m = MomentMethod::ExactEnumeration;
    Ok(lambda_n(b1n(frame, n, 0.0, m, budgets, seed)?, b2n(frame, n, c, m, budgets, seed)?, c, d, n))
}

/// Samples `u_budget` points uniformly in `‖u‖ ≤ √(cd)` and checks
/// `|ln Zₙ − ln Z̃ₙ| ≤ λₙ(c)‖u‖²` and the one-sided bound derived from it.
pub fn lemma1_audit(post: &LocalPosterior, c: f64, u_budget: usize, budgets: &MomentBudgets, seed: u64) -> Result<Lemma1Report> {
    if !(c > 0.0) {
        return Err(Error::InvalidSpec("c must be positive".into()));
    }
    let d = post.frame.dim();
    let lambda = exact_lambda(post, c, budgets, seed)?;
    let radius = (c * d as f64).sqrt();
    let delta = &post.summary.delta_n;

    let per_chunk = par::map_chunks(u_budget, U_CHUNK, |chunk, _, len| {
        let mut rng = seeded_rng(stream_seed(seed, chunk));
        let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0usize, 0usize);
        for _ in 0..len {
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            let u = random_unit(d, &mut rng) * r;
            let u2 = u.norm_squared();
            let lz = post.log_z(&u);
            let s1 = (lz - post.log_z_tilde(&u)).abs() - lambda * u2;
            let s2 = lz - u.dot(delta) + 0.5 * u2 * (1.0 - 2.0 * lambda);
            worst.0 = worst.0.max(s1);
            worst.1 = worst.1.max(s2);
            worst.2 += (s1 > SLACK) as usize;
            worst.3 += (s2 > SLACK) as usize;
        }
        worst
    });
    let mut report = Lemma1Report {
        c,
        lambda,
        samples: u_budget,
        max_slack: f64::NEG_INFINITY,
        max_slack_upper: f64::NEG_INFINITY,
        violations: 0,
        violations_upper: 0,
    };
    for (a, b, va, vb) in per_chunk {
        report.max_slack = report.max_slack.max(a);
        report.max_slack_upper = report.max_slack_upper.max(b);
        report.violations += va;
        report.violations_upper += vb;
    }
    Ok(report)
}

/// `ln ∫ Z̃ₙ = (d/2)ln 2π + ‖Δₙ‖²/2`.
fn log_int_z_tilde(post: &LocalPosterior) -> f64 {
    0.5 * post.frame.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * post.summary.delta_n.norm_squared()
}

fn check_dim(d: usize) -> Result<()> {
    if d > AUDIT_DIM {
        return Err(Error::DimensionTooLarge { dim: d, max: AUDIT_DIM });
    }
    Ok(())
}

fn nodes_for(d: usize) -> usize {
    GridSpec::for_dim(d.min(MAX_QUADRATURE_DIM)).nodes
}

/// `(∫Z̃ₙ)⁻¹ ∫_{‖u‖≤√(cd)} |Zₙ − Z̃ₙ|` against `cdλ·e^{cdλ}`.
pub fn lemma3_audit(post: &LocalPosterior, c: f64, budgets: &MomentBudgets, seed: u64) -> Result<LemmaCheck> {
    let d = post.frame.dim();
    check_dim(d)?;
    if !(c > 0.0) {
        return Err(Error::InvalidSpec("c must be positive".into()));
    }
    let lambda = exact_lambda(post, c, budgets, seed)?;
    let radius = (c * d as f64).sqrt();
    let shift = log_int_z_tilde(post);
    let spec = GridSpec::new(nodes_for(d), radius);
    let r = integrate(&spec, &DVector::zeros(d), &DMatrix::identity(d, d), |u| {
        if u.norm() > radius {
            return 0.0;
        }
        ((post.log_z(u) - shift).exp() - (post.log_z_tilde(u) - shift).exp()).abs()
    })?;
    let cdl = c * d as f64 * lambda;
    Ok(LemmaCheck::new(r.value, cdl * cdl.exp(), r.error))
}

/// Parameters of the tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma4Params {
    pub c: f64,
    pub k: f64,
    pub c1: f64,
}

fn lemma4_failures(post: &LocalPosterior, p: &Lemma4Params, lambda: f64) -> Vec<String> {
    let d = post.frame.dim() as f64;
    let mut failed = Vec::new();
    let delta2 = post.summary.delta_n.norm_squared();
    if !(delta2 < p.c1 * d) {
        failed.push(format!("‖Δ‖² = {delta2} is not below C1·d = {}", p.c1 * d));
    }
    if !(lambda < 1.0 / 16.0) {
        failed.push(format!("λ = {lambda} is not below 1/16"));
    }
    let floor = 16.0 * (4.0 * p.c1).max(1.0 / (1.0 - 2.0 * lambda));
    if !(p.c > floor) {
        failed.push(format!("c = {} does not exceed 16·max(4C1, 1/(1−2λ)) = {floor}", p.c));
    }
    if !(p.k >= 1.0) {
        failed.push(format!("k = {} is below 1", p.k));
    }
    failed
}

/// Smallest admissible `c` for the tail bound given `C1`, found by iterating
/// `c ← 16·max(4C1, 1/(1−2λₙ(c)))` (nudged up by a relative 1e-6).
pub fn lemma4_minimal_c(post: &LocalPosterior, c1: f64, budgets: &MomentBudgets, seed: u64) -> Result<f64> {
    let mut c = 64.0 * c1.max(0.25);
    for _ in 0..50 {
        let lambda = exact_lambda(post, c, budgets, seed)?;
        if !(lambda < 0.5) {
            return Err(Error::Infeasible(format!("λ = {lambda} at c = {c}; no admissible c")));
        }
        let next = 16.0 * (4.0 * c1).max(1.0 / (1.0 - 2.0 * lambda)) * (1.0 + 1e-6);
        if (next - c).abs() <= 1e-9 * c {
            return Ok(next.max(c));
        }
        c = next;
    }
    Ok(c)
}

/// `∫_{‖u‖≥k√(cd)} π(θ(u))Zₙ(u) du` against
/// `sup π · e^{cdλ} · ∫Z̃ₙ · e^{−kcd/8}`.
///
/// The integral runs over a cube wide enough that `Zₙ`, log-concave and
/// already below its Gaussian envelope at the ball's edge, is negligible
/// outside it.
pub fn lemma4_audit(post: &LocalPosterior, params: &Lemma4Params, budgets: &MomentBudgets, seed: u64) -> Result<LemmaCheck> {
    let d = post.frame.dim();
    check_dim(d)?;
    let lambda = exact_lambda(post, params.c, budgets, seed)?;
    let failed = lemma4_failures(post, params, lambda);
    if !failed.is_empty() {
        return Err(Error::PreconditionViolated(failed.join("; ")));
    }
    let sup_ratio = post.prior.sup_log_ratio_bound().ok_or_else(|| Error::PreconditionViolated("prior has no bound on sup π/π(θ₀)".into()))?;
    let log_sup_pi = post.prior.log_density(&post.frame.theta0) + sup_ratio;

    let cd = params.c * d as f64;
    let inner = params.k * cd.sqrt();
    let delta_norm = post.summary.delta_n.norm();
    let half_width = (2.0 * inner).max(inner + delta_norm + 15.0);
    let log_integral = |nodes: usize| {
        let grid = Grid::new(&GridSpec::new(nodes, half_width), &DVector::zeros(d), &DMatrix::identity(d, d));
        let logs = grid.map(|_, u| if u.norm() < inner { f64::NEG_INFINITY } else { post.log_unnormalized(u) });
        log_sum_exp(&logs) + grid.cell_volume().ln()
    };
    let nodes = nodes_for(d);
    let fine = log_integral(nodes);
    let coarse = log_integral(nodes / 2);

    let log_rhs = log_sup_pi + cd * lambda + log_int_z_tilde(post) - params.k * cd / 8.0;
    let lhs = fine.exp();
    let error = if fine == f64::NEG_INFINITY && coarse == f64::NEG_INFINITY { 0.0 } else { (fine.exp() - coarse.exp()).abs() };
    Ok(LemmaCheck::new(lhs, log_rhs.exp(), error))
}
