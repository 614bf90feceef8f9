//! Tensor-product midpoint rules on a cube in whitened coordinates.
//!
//! A point `w ∈ [−R, R]^d` maps to `γ = center + L·w`; integrals pick up the
//! Jacobian `|det L|`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par;

pub const MAX_QUADRATURE_DIM: usize = 3;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Nodes per axis; even, at least 64.
    pub nodes: usize,
    /// Half-width of the cube in whitened coordinates.
    pub radius: f64,
}

impl GridSpec {
    pub fn new(nodes: usize, radius: f64) -> Self {
        GridSpec { nodes, radius }
    }

    /// Default resolution: finer axes in low dimension, radius 10.
    pub fn for_dim(dim: usize) -> Self {
        let nodes = match dim {
            1 => 4096,
            2 => 320,
            _ => 64,
        };
        GridSpec { nodes, radius: 10.0 }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim > MAX_QUADRATURE_DIM {
            return Err(Error::DimensionTooLarge { dim, max: MAX_QUADRATURE_DIM });
        }
        if dim == 0 {
            return Err(Error::InvalidSpec("quadrature dimension must be at least 1".into()));
        }
        if self.nodes < 64 || !self.nodes.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!("grid needs an even node count of at least 64, got {}", self.nodes)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidSpec("grid radius must be positive".into()));
        }
        Ok(())
    }

    pub fn halved(&self) -> GridSpec {
        GridSpec { nodes: self.nodes / 2, radius: self.radius }
    }
}

/// Midpoint grid over `[−R, R]^d` mapped by an affine transform.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    nodes: usize,
    radius: f64,
    h: f64,
    center: DVector<f64>,
    chol: DMatrix<f64>,
    jacobian: f64,
}

impl Grid {
    pub fn new(spec: &GridSpec, center: &DVector<f64>, chol: &DMatrix<f64>) -> Self {
        let dim = center.len();
        Grid {
            dim,
            nodes: spec.nodes,
            radius: spec.radius,
            h: 2.0 * spec.radius / spec.nodes as f64,
            center: center.clone(),
            chol: chol.clone(),
            jacobian: chol.determinant().abs(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell in `γ`-space.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32) * self.jacobian
    }

    /// Whitened coordinates of node `index`.
    pub fn whitened(&self, mut index: usize) -> DVector<f64> {
        let mut w = DVector::zeros(self.dim);
        for k in 0..self.dim {
            let i = index % self.nodes;
            index /= self.nodes;
            w[k] = -self.radius + (i as f64 + 0.5) * self.h;
        }
        w
    }

    pub fn to_gamma(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.chol * w
    }

    /// `f(w, γ)` at every node, in index order.
    pub fn map<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&DVector<f64>, &DVector<f64>) -> R + Send + Sync,
    {
        par::map_chunks(self.len(), CHUNK, |_, start, len| {
            (start..start + len)
                .map(|i| {
                    let w = self.whitened(i);
                    let g = self.to_gamma(&w);
                    f(&w, &g)
                })
                .collect::<Vec<R>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }
}

/// An integral estimate with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

/// `∫ f(γ) dγ` over the mapped cube; error from halving the grid.
pub fn integrate<F>(spec: &GridSpec, center: &DVector<f64>, chol: &DMatrix<f64>, f: F) -> Result<Integral>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
{
    spec.validate(center.len())?;
    let once = |s: &GridSpec| {
        let grid = Grid::new(s, center, chol);
        grid.map(|_, g| f(g)).iter().sum::<f64>() * grid.cell_volume()
    };
    let fine = once(spec);
    let coarse = once(&spec.halved());
    Ok(Integral { value: fine, error: (fine - coarse).abs() })
}

/// `ln ∫ exp(g(γ)) dγ` over the mapped cube, and its halving error on the
/// linear scale relative to the integral.
pub fn log_integrate<F>(spec: &GridSpec, center: &DVector<f64>, chol: &DMatrix<f64>, g: F) -> Result<(f64, f64)>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
{
    spec.validate(center.len())?;
    let once = |s: &GridSpec| {
        let grid = Grid::new(s, center, chol);
        log_sum_exp(&grid.map(|_, x| g(x))) + grid.cell_volume().ln()
    };
    let fine = once(spec);
    let coarse = once(&spec.halved());
    Ok((fine, (coarse - fine).exp_m1().abs()))
}

/// Stable `ln Σ exp(v_i)`; `−∞` when every term is `−∞`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
