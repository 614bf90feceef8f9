//! Projected third and fourth moments over shrinking parameter balls, the
//! deviation bound λₙ(c) built from them, and numerical audits of the
//! inequalities they feed.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{operator_norm, sym_inv_sqrt};
use crate::local::LocalFrame;
use crate::par;
use crate::rng::{derive_seed, seeded_rng, stream_seed, Rng};

mod audits;
mod growth;

pub use audits::{lemma1_audit, lemma3_audit, lemma4_audit, lemma4_minimal_c, Lemma1Report, Lemma4Params, LemmaCheck};
pub use growth::{growth_check, GrowthCell, GrowthRatio, GrowthReport, Regime, Verdict};

const MAX_ATOMS: usize = 1_000_000;
const POLISH_STEPS: usize = 40;
const ASCENT_ITERS: usize = 500;
const MC_ROW_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMethod {
    /// Exact expectations over a finite support.
    ExactEnumeration,
    /// Sample means of `draws` centered sufficient statistics.
    MonteCarlo { draws: usize },
}

impl MomentMethod {
    pub fn label(&self) -> &'static str {
        match self {
            MomentMethod::ExactEnumeration => "exact-enumeration",
            MomentMethod::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

/// Search budgets for the two suprema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBudgets {
    /// Random restarts of the direction ascent (exact expectations).
    pub directions: usize,
    /// Shell points probed on the boundary of the parameter ball.
    pub shell: usize,
    /// Random directions searched with Monte Carlo expectations.
    pub mc_directions: usize,
}

impl Default for MomentBudgets {
    fn default() -> Self {
        MomentBudgets { directions: 32, shell: 16, mc_directions: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBounds {
    pub c: f64,
    pub b1n_at_0: f64,
    pub b2n_at_c: f64,
    pub method: MomentMethod,
    pub direction_budget: usize,
    pub shell_budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaCurve {
    pub c_grid: Vec<f64>,
    pub b2_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub b1_at_0: f64,
    /// `+∞` when λₙ stays below the threshold on the whole grid.
    pub a_n: f64,
    pub d: usize,
    pub n: usize,
}

/// `(1/6)(√(cd/n)·B₁ₙ(0) + (cd/n)·B₂ₙ(c))`.
pub fn lambda_n(b1_at_0: f64, b2_at_c: f64, c: f64, d: usize, n: usize) -> f64 {
    let r = c * d as f64 / n as f64;
    (r.sqrt() * b1_at_0 + r * b2_at_c) / 6.0
}

/// `B₁ₙ(c)`: sup of `E_θ|⟨a, V⟩|³`.
pub fn b1n(frame: &LocalFrame, n: usize, c: f64, method: MomentMethod, budgets: &MomentBudgets, seed: u64) -> Result<f64> {
    moment_sup(frame, n, c, 3, method, budgets, derive_seed(seed, &["b1n"]))
}

/// `B₂ₙ(c)`: sup of `E_θ⟨a, V⟩⁴`.
pub fn b2n(frame: &LocalFrame, n: usize, c: f64, method: MomentMethod, budgets: &MomentBudgets, seed: u64) -> Result<f64> {
    moment_sup(frame, n, c, 4, method, budgets, derive_seed(seed, &["b2n"]))
}

pub fn moment_bounds(frame: &LocalFrame, n: usize, c: f64, method: MomentMethod, budgets: &MomentBudgets, seed: u64) -> Result<MomentBounds> {
    Ok(MomentBounds {
        c,
        b1n_at_0: b1n(frame, n, 0.0, method, budgets, seed)?,
        b2n_at_c: b2n(frame, n, c, method, budgets, seed)?,
        method,
        direction_budget: budgets.directions,
        shell_budget: budgets.shell,
    })
}

/// Largest `c ≤ c_max` with `λₙ(c) ≤ threshold`, by bisection to `tol`.
#[allow(clippy::too_many_arguments)]
pub fn a_n_bisect(
    frame: &LocalFrame,
    n: usize,
    c_max: f64,
    threshold: f64,
    tol: f64,
    method: MomentMethod,
    budgets: &MomentBudgets,
    seed: u64,
) -> Result<f64> {
    if !(c_max > 0.0) {
        return Err(Error::InvalidSpec("c_max must be positive".into()));
    }
    let d = frame.dim();
    let b1 = b1n(frame, n, 0.0, method, budgets, seed)?;
    let lam = |c: f64| -> Result<f64> { Ok(lambda_n(b1, b2n(frame, n, c, method, budgets, seed)?, c, d, n)) };
    if lam(c_max)? <= threshold {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (0.0, c_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if lam(mid)? <= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// λₙ over a grid of `c`, with `B₂ₙ` made monotone by a running maximum
/// (the balls are nested), and `aₙ` bisected up to the last grid point.
pub fn lambda_curve(frame: &LocalFrame, n: usize, c_grid: &[f64], method: MomentMethod, budgets: &MomentBudgets, seed: u64) -> Result<LambdaCurve> {
    if c_grid.is_empty() || c_grid.windows(2).any(|w| !(w[1] > w[0])) || c_grid[0] <= 0.0 {
        return Err(Error::InvalidSpec("c grid must be positive and strictly increasing".into()));
    }
    let d = frame.dim();
    let b1 = b1n(frame, n, 0.0, method, budgets, seed)?;
    let raw: Vec<Result<f64>> = par::map_slice(c_grid, |&c| b2n(frame, n, c, method, budgets, seed));
    let mut b2_values = Vec::with_capacity(raw.len());
    let mut running = f64::NEG_INFINITY;
    for b in raw {
        running = running.max(b?);
        b2_values.push(running);
    }
    let lambda_values = c_grid.iter().zip(&b2_values).map(|(&c, &b2)| lambda_n(b1, b2, c, d, n)).collect();
    let a_n = a_n_bisect(frame, n, *c_grid.last().unwrap(), 1.0 / 16.0, 1e-6, method, budgets, seed)?;
    Ok(LambdaCurve { c_grid: c_grid.to_vec(), b2_values, lambda_values, b1_at_0: b1, a_n, d, n })
}

/// Bundle of the moment diagnostics for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub bounds: MomentBounds,
    pub curve: LambdaCurve,
}

pub fn diagnose(frame: &LocalFrame, n: usize, c_grid: &[f64], method: MomentMethod, budgets: &MomentBudgets, seed: u64) -> Result<DiagnosticsReport> {
    let curve = lambda_curve(frame, n, c_grid, method, budgets, seed)?;
    let c = *c_grid.last().unwrap();
    let bounds = MomentBounds {
        c,
        b1n_at_0: curve.b1_at_0,
        b2n_at_c: *curve.b2_values.last().unwrap(),
        method,
        direction_budget: budgets.directions,
        shell_budget: budgets.shell,
    };
    Ok(DiagnosticsReport { bounds, curve })
}

/// `‖I − H_θ⁻¹J‖` with `H_θ = ψ''(θ)^{1/2}`.
pub fn h_theta_proximity(frame: &LocalFrame, theta: &DVector<f64>) -> Result<f64> {
    let h_inv = sym_inv_sqrt(&frame.model.hessian(theta)?)?;
    let d = frame.dim();
    Ok(operator_norm(&(DMatrix::identity(d, d) - h_inv.as_matrix() * frame.j.as_matrix())))
}

/// Reverse Hölder check `(E‖X‖^k)^{1/k} ≤ 2k·(E‖X‖²)^{1/2}` on a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn lv_reverse_moment_check(samples: &DMatrix<f64>, k: u32) -> Result<MomentCheck> {
    if k == 0 {
        return Err(Error::InvalidSpec("k must be at least 1".into()));
    }
    if samples.nrows() < 2 {
        return Err(Error::InvalidSpec("need at least two samples".into()));
    }
    let m = samples.nrows() as f64;
    let norms: Vec<f64> = samples.row_iter().map(|r| r.norm()).collect();
    let pk: Vec<f64> = norms.iter().map(|r| r.powi(k as i32)).collect();
    let mean_k = pk.iter().sum::<f64>() / m;
    let var_k = pk.iter().map(|v| (v - mean_k).powi(2)).sum::<f64>() / (m - 1.0);
    let lhs = mean_k.powf(1.0 / k as f64);
    let rhs = 2.0 * k as f64 * (norms.iter().map(|r| r * r).sum::<f64>() / m).sqrt();
    // delta method: relative error of the k-th root is 1/k times that of the mean
    let rel = if mean_k > 0.0 { (var_k / m).sqrt() / mean_k / k as f64 } else { 0.0 };
    Ok(MomentCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 3.0 * rel) })
}

/// `sup_a E|⟨a, MX⟩|^k ≤ ‖M‖^k · sup_a E|⟨a, X⟩|^k` on the empirical law of
/// `samples`.
pub fn matrix_map_moment_check(samples: &DMatrix<f64>, m: &DMatrix<f64>, k: u32, restarts: usize, seed: u64) -> Result<MomentCheck> {
    let d = samples.ncols();
    if m.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: m.nrows() });
    }
    let weights = vec![1.0 / samples.nrows() as f64; samples.nrows()];
    let mapped = samples * m.transpose();
    let mut rng = seeded_rng(seed);
    let starts = direction_starts(d, restarts, &mut rng, &[]);
    let lhs = sup_direction(&mapped, &weights, k as f64, &starts);
    let rhs = operator_norm(m).powi(k as i32) * sup_direction(samples, &weights, k as f64, &starts);
    Ok(MomentCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-9) })
}

pub(crate) fn random_unit(d: usize, rng: &mut Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        });
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Coordinate axes, normalized extra directions, then `count` random ones.
fn direction_starts(d: usize, count: usize, rng: &mut Rng, extra: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        })
        .collect();
    out.extend(extra.iter().filter(|v| v.norm() > 1e-12).map(|v| v.normalize()));
    out.extend((0..count).map(|_| random_unit(d, rng)));
    out
}

/// `sup_{‖a‖=1} Σ_j w_j |⟨a, v_j⟩|^k` for rows `v_j` of `points`. The map is
/// convex and `k`-homogeneous, so `a ← ∇f/‖∇f‖` never decreases it.
fn sup_direction(points: &DMatrix<f64>, weights: &[f64], k: f64, starts: &[DVector<f64>]) -> f64 {
    let value = |a: &DVector<f64>| -> f64 {
        let t = points * a;
        t.iter().zip(weights).map(|(t, w)| w * t.abs().powf(k)).sum()
    };
    let mut best = f64::NEG_INFINITY;
    for start in starts {
        let mut a = start.clone();
        let mut f = value(&a);
        for _ in 0..ASCENT_ITERS {
            let t = points * &a;
            let coef = DVector::from_iterator(t.len(), t.iter().zip(weights).map(|(t, w)| w * t.abs().powf(k - 1.0) * t.signum()));
            let g = points.transpose() * coef;
            let gn = g.norm();
            if gn == 0.0 {
                break;
            }
            let next = g / gn;
            let fnext = value(&next);
            if fnext <= f * (1.0 + 1e-14) {
                if fnext > f {
                    f = fnext;
                }
                break;
            }
            a = next;
            f = fnext;
        }
        best = best.max(f);
    }
    best
}

/// Moment of one direction at one parameter point; `None` outside the domain.
type Evaluator<'a> = Box<dyn Fn(&DVector<f64>, u64) -> Option<f64> + Sync + 'a>;

fn moment_sup(frame: &LocalFrame, n: usize, c: f64, k: u32, method: MomentMethod, budgets: &MomentBudgets, seed: u64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidSpec(format!("c must be nonnegative, got {c}")));
    }
    if n == 0 {
        return Err(Error::InvalidSpec("n must be at least 1".into()));
    }
    let d = frame.dim();
    let evaluator: Evaluator<'_> = match method {
        MomentMethod::ExactEnumeration => {
            let atoms =
                frame.model.family().support().ok_or_else(|| {
                    Error::UnsupportedMethod(format!("exact enumeration needs finite support; {} is continuous", frame.model.name()))
                })?;
            if atoms.len() > MAX_ATOMS {
                return Err(Error::UnsupportedMethod(format!("support has {} atoms (limit {MAX_ATOMS})", atoms.len())));
            }
            let directions = budgets.directions;
            Box::new(move |theta: &DVector<f64>, s: u64| exact_projected_moment(frame, theta, k, directions, s))
        }
        MomentMethod::MonteCarlo { draws } => {
            if draws < 2 {
                return Err(Error::InvalidSpec("Monte Carlo moments need at least two draws".into()));
            }
            let mut rng = seeded_rng(derive_seed(seed, &["mc-directions"]));
            let dirs = direction_starts(d, budgets.mc_directions, &mut rng, &[]);
            let dirs = DMatrix::from_columns(&dirs);
            Box::new(move |theta: &DVector<f64>, s: u64| mc_projected_moment(frame, theta, k, draws, &dirs, s))
        }
    };

    let theta0_value = evaluator(&frame.theta0, derive_seed(seed, &["theta0"]))
        .ok_or_else(|| Error::PreconditionViolated("projected moment undefined at the true parameter".into()))?;
    if c == 0.0 {
        return Ok(theta0_value);
    }

    let radius = (c * d as f64 / n as f64).sqrt();
    let mut rng = seeded_rng(derive_seed(seed, &["shell"]));
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    for dir in direction_starts(d, budgets.shell, &mut rng, &[]) {
        candidates.push(&dir * radius);
        candidates.push(&dir * -radius);
        candidates.push(&dir * (0.5 * radius));
    }
    let theta_of = |v: &DVector<f64>| &frame.theta0 + &frame.j_inv * v;
    let values: Vec<Option<f64>> = par::map_range(candidates.len(), |i| evaluator(&theta_of(&candidates[i]), stream_seed(seed, i)));

    let mut best = theta0_value;
    let mut best_v = DVector::zeros(d);
    for (v, val) in candidates.iter().zip(values) {
        if let Some(val) = val {
            if val > best {
                best = val;
                best_v = v.clone();
            }
        }
    }

    // local random search; Monte Carlo objectives are too noisy to polish
    if method == MomentMethod::ExactEnumeration {
        let mut rng = seeded_rng(derive_seed(seed, &["polish"]));
        let mut step = 0.25 * radius;
        for i in 0..POLISH_STEPS {
            let mut v = &best_v + random_unit(d, &mut rng) * step;
            let norm = v.norm();
            if norm > radius {
                v *= radius / norm;
            }
            if let Some(val) = evaluator(&theta_of(&v), stream_seed(seed, candidates.len() + i)) {
                if val > best {
                    best = val;
                    best_v = v;
                    continue;
                }
            }
            step *= 0.85;
        }
    }
    Ok(best)
}

fn exact_projected_moment(frame: &LocalFrame, theta: &DVector<f64>, k: u32, directions: usize, seed: u64) -> Option<f64> {
    if !frame.model.in_domain(theta) {
        return None;
    }
    let probs = frame.model.atom_probabilities(theta)?;
    let atoms = frame.model.family().support()?;
    let d = frame.dim();
    let mean = atoms.iter().zip(&probs).fold(DVector::zeros(d), |acc, (x, p)| acc + x * *p);
    let v: Vec<DVector<f64>> = atoms.iter().map(|x| &frame.j_inv * &(x - &mean)).collect();
    let points = DMatrix::from_rows(&v.iter().map(|r| r.transpose()).collect::<Vec<_>>());
    let mut rng = seeded_rng(seed);
    let starts = direction_starts(d, directions, &mut rng, &v);
    Some(sup_direction(&points, &probs, k as f64, &starts))
}

fn mc_projected_moment(frame: &LocalFrame, theta: &DVector<f64>, k: u32, draws: usize, dirs: &DMatrix<f64>, seed: u64) -> Option<f64> {
    if !frame.model.in_domain(theta) {
        return None;
    }
    let x = frame.model.family().sample_centered(theta, draws, &mut seeded_rng(seed));
    let v = x * frame.j_inv.as_matrix();
    let kdirs = dirs.ncols();
    let partial: Vec<Vec<f64>> = par::map_chunks(draws, MC_ROW_CHUNK, |_, start, len| {
        let proj = v.rows(start, len) * dirs;
        (0..kdirs)
            .map(|j| {
                proj.column(j)
                    .iter()
                    .map(|t| {
                        let t2 = t * t;
                        if k == 4 {
                            t2 * t2
                        } else {
                            t2 * t.abs()
                        }
                    })
                    .sum::<f64>()
            })
            .collect()
    });
    let mut sums = vec![0.0; kdirs];
    for p in partial {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    Some(sums.into_iter().fold(f64::NEG_INFINITY, f64::max) / draws as f64)
}
