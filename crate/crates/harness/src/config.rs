//! Experiment configuration files (JSON).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Multinomial,
    MvLinear,
    ElMean,
    SurToy,
    SsemToy,
    IdentityEmbed,
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::Multinomial => "multinomial",
            Family::MvLinear => "mv-linear",
            Family::ElMean => "el-mean",
            Family::SurToy => "sur-toy",
            Family::SsemToy => "ssem-toy",
            Family::IdentityEmbed => "identity-embed",
        }
    }

    pub fn is_curved(&self) -> bool {
        !matches!(self, Family::Multinomial | Family::MvLinear)
    }
}

/// One `(d, n)` sweep cell; mv-linear cells give `d_r` and `d_c` instead of `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_c: Option<usize>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Prior {
    #[default]
    Flat,
    Lipschitz {
        k: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Tv,
    AlphaMoment {
        alpha: f64,
    },
    LambdaCurve,
    #[serde(rename = "a-n")]
    AN,
    LemmaAudits,
    MleRate,
    TailMass,
    Growth,
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Tv => "tv".into(),
            Metric::AlphaMoment { alpha } => format!("alpha-moment:{alpha}"),
            Metric::LambdaCurve => "lambda-curve".into(),
            Metric::AN => "a-n".into(),
            Metric::LemmaAudits => "lemma-audits".into(),
            Metric::MleRate => "mle-rate".into(),
            Metric::TailMass => "tail-mass".into(),
            Metric::Growth => "growth".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    #[default]
    Quadrature,
    Importance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MomentKind {
    /// Exact enumeration when the family has finite support, Monte Carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

/// Numerical knobs; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub distance: DistanceKind,
    pub grid_nodes: Option<usize>,
    pub grid_radius: f64,
    pub budget: usize,
    pub moment_method: MomentKind,
    pub mc_draws: usize,
    pub directions: usize,
    pub shell: usize,
    pub c: f64,
    pub c_grid: Vec<f64>,
    pub u_budget: usize,
    pub lemma4_c1: f64,
    pub lemma4_k: f64,
    pub kappa: f64,
    pub k_bar: f64,
    pub starts: usize,
    pub growth_alpha: f64,
    pub growth_delta: f64,
    /// Category probabilities for multinomial cells (length `d + 1`); uniform if absent.
    pub probs: Option<Vec<f64>>,
    pub sigma2: f64,
    pub pi: f64,
    pub eta0: Option<f64>,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            distance: DistanceKind::Quadrature,
            grid_nodes: None,
            grid_radius: 10.0,
            budget: 1 << 16,
            moment_method: MomentKind::Auto,
            mc_draws: 20_000,
            directions: 32,
            shell: 16,
            c: 1.0,
            c_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            u_budget: 10_000,
            lemma4_c1: 1.0,
            lemma4_k: 1.0,
            kappa: 1.0,
            k_bar: 2.0,
            starts: 10,
            growth_alpha: 0.0,
            growth_delta: 0.0,
            probs: None,
            sigma2: 1.0,
            pi: 0.5,
            eta0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub family: Family,
    pub sweep: Vec<Cell>,
    #[serde(default)]
    pub prior: Prior,
    pub metrics: Vec<Metric>,
    #[serde(default = "one")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub method: MethodParams,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::ConfigInvalid(vec![format!("parse: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::ConfigInvalid(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    /// Collects every field-level problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.experiment.trim().is_empty() {
            problems.push("experiment: must be a nonempty name".to_string());
        }
        if self.experiment.contains(['/', '\\']) {
            problems.push("experiment: must not contain path separators".to_string());
        }
        if self.sweep.is_empty() {
            problems.push("sweep: must list at least one cell".to_string());
        }
        if self.metrics.is_empty() {
            problems.push("metrics: must list at least one metric".to_string());
        }
        if self.replications == 0 {
            problems.push("replications: must be at least 1".to_string());
        }
        for (i, cell) in self.sweep.iter().enumerate() {
            if cell.n == 0 {
                problems.push(format!("sweep[{i}].n: must be positive"));
            }
            match self.family {
                Family::MvLinear => {
                    if cell.d_r.unwrap_or(0) == 0 || cell.d_c.unwrap_or(0) == 0 {
                        problems.push(format!("sweep[{i}]: mv-linear cells need positive d_r and d_c"));
                    }
                }
                Family::Multinomial | Family::IdentityEmbed if cell.d.unwrap_or(0) == 0 => {
                    problems.push(format!("sweep[{i}].d: must be positive"));
                }
                _ => {}
            }
        }
        for (i, m) in self.metrics.iter().enumerate() {
            if let Metric::AlphaMoment { alpha } = m {
                if !(*alpha >= 0.0 && alpha.is_finite()) {
                    problems.push(format!("metrics[{i}].alpha: must be a finite nonnegative number"));
                }
            }
            let curved_only = matches!(m, Metric::MleRate | Metric::TailMass);
            let flat_only = matches!(m, Metric::LambdaCurve | Metric::AN | Metric::LemmaAudits);
            if curved_only && !self.family.is_curved() {
                problems.push(format!("metrics[{i}]: {} needs a curved family", m.name()));
            }
            if flat_only && self.family.is_curved() {
                problems.push(format!("metrics[{i}]: {} needs an exponential family", m.name()));
            }
        }
        if let Prior::Lipschitz { k } = self.prior {
            if !(k >= 0.0 && k.is_finite()) {
                problems.push("prior.k: must be a finite nonnegative number".to_string());
            }
        }
        let m = &self.method;
        if m.budget == 0 || m.u_budget == 0 || m.mc_draws == 0 || m.starts == 0 {
            problems.push("method: budget, u_budget, mc_draws and starts must be positive".to_string());
        }
        if m.c_grid.is_empty() || m.c_grid.windows(2).any(|w| !(w[1] > w[0])) || m.c_grid[0] <= 0.0 {
            problems.push("method.c_grid: must be positive and strictly increasing".to_string());
        }
        if !(m.c > 0.0 && m.kappa > 0.0 && m.k_bar >= 0.0 && m.grid_radius > 0.0) {
            problems.push("method: c, kappa and grid_radius must be positive, k_bar nonnegative".to_string());
        }
        if let Some(p) = &m.probs {
            for (i, cell) in self.sweep.iter().enumerate() {
                if let Some(d) = cell.d {
                    if p.len() != d + 1 {
                        problems.push(format!("method.probs: length {} does not match sweep[{i}].d + 1 = {}", p.len(), d + 1));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::ConfigInvalid(problems))
        }
    }

    /// Stable hash of the canonicalized config: defaults filled in, keys
    /// sorted, numbers normalized to their shortest `f64` form.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        canonical(&value, &mut out);
        let hash = Sha256::digest(out.as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn canonical(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&format!("{:?}", n.as_f64().unwrap_or(f64::NAN))),
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap()),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical(x, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let sorted: BTreeMap<_, _> = m.iter().collect();
            out.push('{');
            for (i, (k, x)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                canonical(x, out);
            }
            out.push('}');
        }
    }
}

/// Input of the `el-solve` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElSolveConfig {
    pub support: Vec<Vec<f64>>,
    #[serde(default = "mean")]
    pub moment: String,
    #[serde(default)]
    pub moment_params: BTreeMap<String, f64>,
    pub eta: Vec<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

fn mean() -> String {
    "mean".into()
}

impl ElSolveConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::ConfigInvalid(vec![format!("{}: {e}", path.display())]))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(vec![format!("parse: {e}")]))
    }
}
