//! Executes a sweep: one task per (cell, replicate, metric).

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use bvmlab_core::curved::{
    curved_mle, curved_tv, el_mean_toy, identity_embed, ssem_toy, sur_toy, tail_mass_audit, CurvedLocalPosterior, CurvedModel,
};
use bvmlab_core::diagnostics::{
    a_n_bisect, growth_check, lambda_curve, lemma1_audit, lemma3_audit, lemma4_audit, lemma4_minimal_c, GrowthCell, Lemma4Params, MomentBudgets,
    MomentMethod, Regime,
};
use bvmlab_core::expfam::{build_mv_linear, ExpFamilyModel, Multinomial, MvLinearSpec};
use bvmlab_core::local::{alpha_moment_distance, make_summary, DistanceMethod, GridSpec, LocalFrame, LocalPosterior, PriorSpec};
use bvmlab_core::rng::derive_seed;
use bvmlab_core::{par, Error};

use crate::config::{Cell, DistanceKind, ExperimentConfig, Family, Metric, MomentKind, Prior};
use crate::HarnessError;

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub family: String,
    pub d: usize,
    pub d1: usize,
    pub n: usize,
    pub replicate: usize,
    pub metric: String,
    #[serde(with = "crate::emit::float")]
    pub value: f64,
    #[serde(with = "crate::emit::float")]
    pub error: f64,
    pub seed: u64,
    pub config_digest: String,
    pub wall_time_ms: u64,
}

impl RunRecord {
    pub fn is_error(&self) -> bool {
        self.metric.starts_with("error:")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the default pool.
    pub workers: Option<usize>,
    /// Record wall-clock time per task (otherwise 0, keeping output deterministic).
    pub timing: bool,
}

enum Instance {
    Flat(Arc<LocalFrame>),
    Curved(CurvedModel),
}

impl Instance {
    fn frame(&self) -> &Arc<LocalFrame> {
        match self {
            Instance::Flat(f) => f,
            Instance::Curved(m) => &m.frame,
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            Instance::Flat(f) => (f.dim(), f.dim()),
            Instance::Curved(m) => (m.d(), m.d1()),
        }
    }
}

fn multinomial_base(cfg: &ExperimentConfig, d: usize) -> Result<ExpFamilyModel, Error> {
    match &cfg.method.probs {
        Some(p) => Multinomial::from_probs(p),
        None => Multinomial::from_probs(&vec![1.0 / (d + 1) as f64; d + 1]),
    }
}

fn build_instance(cfg: &ExperimentConfig, cell: &Cell) -> Result<Instance, Error> {
    let curved = match cfg.family {
        Family::Multinomial => return Ok(Instance::Flat(Arc::new(LocalFrame::new(multinomial_base(cfg, cell.d.unwrap_or(1))?)?))),
        Family::MvLinear => {
            let (d_r, d_c) = (cell.d_r.unwrap_or(1), cell.d_c.unwrap_or(1));
            let spec = MvLinearSpec::simple(d_r, d_c, cfg.method.sigma2, cfg.method.pi, cell.n);
            return Ok(Instance::Flat(Arc::new(LocalFrame::new(build_mv_linear(&spec)?)?)));
        }
        Family::ElMean => el_mean_toy(cfg.method.eta0.unwrap_or(0.3))?,
        Family::SurToy => sur_toy()?,
        Family::SsemToy => ssem_toy()?,
        Family::IdentityEmbed => identity_embed(&multinomial_base(cfg, cell.d.unwrap_or(1))?, 5.0)?,
    };
    Ok(Instance::Curved(curved))
}

fn prior_spec(prior: &Prior, theta0: &DVector<f64>) -> PriorSpec {
    match prior {
        Prior::Flat => PriorSpec::Flat,
        Prior::Lipschitz { k } => PriorSpec::Lipschitz { k: *k, center: theta0.clone() },
    }
}

fn distance_method(cfg: &ExperimentConfig, dim: usize) -> DistanceMethod {
    let m = &cfg.method;
    match m.distance {
        DistanceKind::Quadrature => {
            DistanceMethod::Quadrature(GridSpec::new(m.grid_nodes.unwrap_or_else(|| GridSpec::for_dim(dim).nodes), m.grid_radius))
        }
        DistanceKind::Importance => DistanceMethod::Importance { budget: m.budget },
    }
}

fn moment_method(cfg: &ExperimentConfig, frame: &LocalFrame) -> MomentMethod {
    let mc = MomentMethod::MonteCarlo { draws: cfg.method.mc_draws };
    match cfg.method.moment_method {
        MomentKind::Exact => MomentMethod::ExactEnumeration,
        MomentKind::MonteCarlo => mc,
        MomentKind::Auto if frame.model.atom_probabilities(&frame.theta0).is_some() => MomentMethod::ExactEnumeration,
        MomentKind::Auto => mc,
    }
}

type Outcome = (String, Result<(f64, f64), Error>);

struct Task {
    cell: usize,
    replicate: usize,
    metric: Metric,
}

/// Deterministic seed of the simulated data for `(cell, replicate)`.
pub fn data_seed(seed: u64, cell: usize, replicate: usize) -> u64 {
    derive_seed(seed, &["data", &cell.to_string(), &replicate.to_string()])
}

/// Deterministic seed of one metric evaluation.
pub fn task_seed(seed: u64, cell: usize, replicate: usize, metric: &str) -> u64 {
    derive_seed(seed, &["task", &cell.to_string(), &replicate.to_string(), metric])
}

fn evaluate(cfg: &ExperimentConfig, inst: &Instance, cell: &Cell, task: &Task) -> Vec<Outcome> {
    let name = task.metric.name();
    let seed = task_seed(cfg.seed, task.cell, task.replicate, &name);
    let n = cell.n;
    let frame = inst.frame();
    let budgets = MomentBudgets { directions: cfg.method.directions, shell: cfg.method.shell, ..MomentBudgets::default() };
    let single = |r: Result<(f64, f64), Error>| vec![(name.clone(), r)];

    let posterior = || -> Result<LocalPosterior, Error> {
        let data = frame.model.sample_sufficient(&frame.theta0, n, data_seed(cfg.seed, task.cell, task.replicate))?;
        let summary = make_summary(frame, &data, n)?;
        Ok(LocalPosterior::new(frame.clone(), summary, prior_spec(&cfg.prior, &frame.theta0)))
    };
    let curved_posterior = |model: &CurvedModel| -> Result<CurvedLocalPosterior, Error> {
        let base = posterior()?;
        CurvedLocalPosterior::from_summary(model, base.prior, base.summary)
    };

    match (&task.metric, inst) {
        (Metric::Tv | Metric::AlphaMoment { .. }, _) => {
            let alpha = match task.metric {
                Metric::AlphaMoment { alpha } => alpha,
                _ => 0.0,
            };
            let (_, d1) = inst.dims();
            let method = distance_method(cfg, d1);
            let r = match inst {
                Instance::Flat(_) => posterior().and_then(|p| alpha_moment_distance(&p, &p.reference(), alpha, &method, seed)),
                Instance::Curved(m) => curved_posterior(m).and_then(|cp| {
                    if alpha == 0.0 {
                        curved_tv(&cp, &method, seed)
                    } else {
                        alpha_moment_distance(&cp, &cp.reference()?, alpha, &method, seed)
                    }
                }),
            };
            single(r.map(|e| (e.value, e.error)))
        }
        (Metric::LambdaCurve, Instance::Flat(frame)) => match lambda_curve(frame, n, &cfg.method.c_grid, moment_method(cfg, frame), &budgets, seed) {
            Ok(curve) => {
                let mut out = vec![("b1n:c=0".to_string(), Ok((curve.b1_at_0, 0.0)))];
                for ((c, b2), lam) in curve.c_grid.iter().zip(&curve.b2_values).zip(&curve.lambda_values) {
                    out.push((format!("b2n:c={c}"), Ok((*b2, 0.0))));
                    out.push((format!("lambda:c={c}"), Ok((*lam, 0.0))));
                }
                out
            }
            Err(e) => single(Err(e)),
        },
        (Metric::AN, Instance::Flat(frame)) => {
            let c_max = *cfg.method.c_grid.last().expect("validated");
            single(a_n_bisect(frame, n, c_max, 1.0 / 16.0, 1e-6, moment_method(cfg, frame), &budgets, seed).map(|a| (a, 0.0)))
        }
        (Metric::LemmaAudits, Instance::Flat(_)) => {
            let post = match posterior() {
                Ok(p) => p,
                Err(e) => return single(Err(e)),
            };
            let c = cfg.method.c;
            let mut out: Vec<Outcome> = Vec::new();
            match lemma1_audit(&post, c, cfg.method.u_budget, &budgets, seed) {
                Ok(r) => {
                    out.push(("lemma1:violations".into(), Ok((r.violations as f64, 0.0))));
                    out.push(("lemma1:max-slack".into(), Ok((r.max_slack, 0.0))));
                    out.push(("lemma1:holds".into(), Ok((f64::from(u8::from(r.holds())), 0.0))));
                }
                Err(e) => out.push(("lemma1".into(), Err(e))),
            }
            match lemma3_audit(&post, c, &budgets, seed) {
                Ok(r) => {
                    out.push(("lemma3:lhs".into(), Ok((r.lhs, r.error))));
                    out.push(("lemma3:rhs".into(), Ok((r.rhs, 0.0))));
                    out.push(("lemma3:holds".into(), Ok((f64::from(u8::from(r.holds)), 0.0))));
                }
                Err(e) => out.push(("lemma3".into(), Err(e))),
            }
            let c1 = cfg.method.lemma4_c1;
            let l4 = lemma4_minimal_c(&post, c1, &budgets, seed)
                .and_then(|c4| lemma4_audit(&post, &Lemma4Params { c: c4, k: cfg.method.lemma4_k, c1 }, &budgets, seed));
            match l4 {
                Ok(r) => {
                    out.push(("lemma4:log-lhs".into(), Ok((r.lhs, r.error))));
                    out.push(("lemma4:log-rhs".into(), Ok((r.rhs, 0.0))));
                    out.push(("lemma4:holds".into(), Ok((f64::from(u8::from(r.holds)), 0.0))));
                }
                Err(e) => out.push(("lemma4".into(), Err(e))),
            }
            out
        }
        (Metric::MleRate, Instance::Curved(model)) => {
            let r = model.sample_data(n, data_seed(cfg.seed, task.cell, task.replicate)).and_then(|data| {
                let x_bar = DVector::from_iterator(model.d(), data.row_mean().iter().copied());
                curved_mle(model, &x_bar, cfg.method.starts, seed)
            });
            single(r.map(|m| (m.norm_error, 0.0)))
        }
        (Metric::TailMass, Instance::Curved(model)) => {
            let grid = cfg.method.grid_nodes.map(|nodes| GridSpec::new(nodes, cfg.method.grid_radius));
            single(curved_posterior(model).and_then(|cp| tail_mass_audit(&cp, cfg.method.k_bar, grid)).map(|t| (t.ratio, t.error)))
        }
        (m, _) => single(Err(Error::UnsupportedMethod(format!("{} is not defined for family {}", m.name(), cfg.family.label())))),
    }
}

fn growth_records(cfg: &ExperimentConfig, digest: &str, dims: &[(usize, usize)]) -> Vec<RunRecord> {
    let regime = match cfg.family {
        Family::Multinomial | Family::IdentityEmbed => Some(Regime::Multinomial),
        Family::MvLinear => Some(Regime::MvLinear),
        Family::ElMean => Some(Regime::MomentRestricted),
        Family::SurToy | Family::SsemToy => None,
    };
    let cells: Vec<GrowthCell> = cfg
        .sweep
        .iter()
        .zip(dims)
        .map(|(c, &(d, _))| match cfg.family {
            Family::MvLinear => GrowthCell { d: c.d_r.unwrap_or(0) as f64, d_c: c.d_c.map(|v| v as f64), n: c.n as f64 },
            _ => GrowthCell { d: d as f64, d_c: None, n: c.n as f64 },
        })
        .collect();
    let report = regime
        .ok_or_else(|| Error::UnsupportedMethod(format!("no growth regime for {}", cfg.family.label())))
        .and_then(|r| growth_check(&cfg.experiment, r, &cells, cfg.method.growth_alpha, cfg.method.growth_delta));
    let record = |i: usize, metric: String, value: f64| RunRecord {
        experiment: cfg.experiment.clone(),
        family: cfg.family.label().into(),
        d: dims[i].0,
        d1: dims[i].1,
        n: cfg.sweep[i].n,
        replicate: 0,
        metric,
        value,
        error: 0.0,
        seed: cfg.seed,
        config_digest: digest.to_string(),
        wall_time_ms: 0,
    };
    match report {
        Ok(rep) => rep
            .ratios
            .iter()
            .flat_map(|ratio| {
                ratio
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| record(i, format!("growth:{}:{}", ratio.label, ratio.verdict.label()), v))
                    .collect::<Vec<_>>()
            })
            .collect(),
        Err(e) => (0..cfg.sweep.len()).map(|i| record(i, format!("error:growth:{}", e.class()), f64::NAN)).collect(),
    }
}

/// Runs every task of the sweep. Task failures become error rows
/// (`metric = error:<metric>:<class>`, value NaN); the sweep never aborts.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        if let Some(w) = opts.workers {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build().map_err(|e| HarnessError::Runtime(e.to_string()))?;
            return Ok(pool.install(|| run_tasks(cfg, opts)));
        }
    }
    Ok(run_tasks(cfg, opts))
}

fn run_tasks(cfg: &ExperimentConfig, opts: &RunOptions) -> Vec<RunRecord> {
    let digest = cfg.digest();
    let instances: Vec<Result<Instance, Error>> = par::map_slice(&cfg.sweep, |cell| build_instance(cfg, cell));
    let dims: Vec<(usize, usize)> = instances
        .iter()
        .zip(&cfg.sweep)
        .map(|(inst, cell)| match inst {
            Ok(i) => i.dims(),
            Err(_) => {
                let d = cell.d.unwrap_or(cell.d_r.unwrap_or(0) * cell.d_c.unwrap_or(0));
                (d, d)
            }
        })
        .collect();

    let mut tasks = Vec::new();
    for cell in 0..cfg.sweep.len() {
        for replicate in 0..cfg.replications {
            for metric in cfg.metrics.iter().filter(|m| **m != Metric::Growth) {
                tasks.push(Task { cell, replicate, metric: metric.clone() });
            }
        }
    }

    let rows: Vec<Vec<RunRecord>> = par::map_slice(&tasks, |task| {
        let cell = &cfg.sweep[task.cell];
        let start = Instant::now();
        let outcomes = match &instances[task.cell] {
            Ok(inst) => evaluate(cfg, inst, cell, task),
            Err(e) => vec![(task.metric.name(), Err(e.clone()))],
        };
        let wall_time_ms = if opts.timing { start.elapsed().as_millis() as u64 } else { 0 };
        let (d, d1) = dims[task.cell];
        outcomes
            .into_iter()
            .map(|(metric, r)| {
                let (metric, value, error) = match r {
                    Ok((v, e)) => (metric, v, e),
                    Err(e) => (format!("error:{metric}:{}", e.class()), f64::NAN, f64::NAN),
                };
                RunRecord {
                    experiment: cfg.experiment.clone(),
                    family: cfg.family.label().into(),
                    d,
                    d1,
                    n: cell.n,
                    replicate: task.replicate,
                    metric,
                    value,
                    error,
                    seed: cfg.seed,
                    config_digest: digest.clone(),
                    wall_time_ms,
                }
            })
            .collect()
    });
    let mut records: Vec<RunRecord> = rows.into_iter().flatten().collect();
    if cfg.metrics.contains(&Metric::Growth) {
        records.extend(growth_records(cfg, &digest, &dims));
    }
    sort_records(&mut records);
    records
}

/// Documented output order: `(d, n, replicate, metric)`, stable otherwise.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| (a.d, a.n, a.replicate, &a.metric).cmp(&(b.d, b.n, b.replicate, &b.metric)));
}
