//! Concrete curved maps `η ↦ θ(η)`.

use std::f64::consts::SQRT_2;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics::random_unit;
use crate::el::{theta_of_eta, EtaDomain, MomentModel};
use crate::error::{Error, Result};
use crate::linalg::{eig_extremes, operator_norm, SymmetricMatrix};
use crate::rng::Rng;

/// A map from `Ψ ⊂ ℝ^{d₁}` into the natural parameter space `ℝ^d`.
pub trait CurvedMap: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn d1(&self) -> usize;
    fn d(&self) -> usize;
    fn contains(&self, eta: &DVector<f64>) -> bool;
    /// `θ(η)`; `OutOfDomain` outside `Ψ`.
    fn theta(&self, eta: &DVector<f64>) -> Result<DVector<f64>>;
    /// A random point of `Ψ`.
    fn sample(&self, rng: &mut Rng) -> DVector<f64>;
    /// A nearby point of `Ψ` (identity on `Ψ`).
    fn project(&self, eta: &DVector<f64>) -> DVector<f64>;
    /// Axis-aligned box containing `Ψ`, when cheap to state.
    fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }
}

fn uniform_box(lo: &DVector<f64>, hi: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>())
}

fn clamp_box(eta: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(eta.len(), |i, _| eta[i].clamp(lo[i], hi[i]))
}

/// `θ = b + Aη` on a box.
#[derive(Debug, Clone)]
pub struct LinearMap {
    name: String,
    pub a: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl LinearMap {
    pub fn new(name: &str, a: DMatrix<f64>, offset: DVector<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if offset.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), found: offset.len() });
        }
        if lo.len() != a.ncols() || hi.len() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.ncols(), found: lo.len() });
        }
        if a.ncols() > a.nrows() {
            return Err(Error::InvalidSpec("a curved map needs d1 ≤ d".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidSpec("box needs lo < hi".into()));
        }
        Ok(LinearMap { name: name.to_string(), a, offset, lo, hi })
    }

    /// `θ = η` on the box `center ± half_width`.
    pub fn identity(center: &DVector<f64>, half_width: f64) -> Result<Self> {
        let d = center.len();
        let w = DVector::from_element(d, half_width);
        LinearMap::new("identity-embed", DMatrix::identity(d, d), DVector::zeros(d), center - &w, center + &w)
    }
}

impl CurvedMap for LinearMap {
    fn name(&self) -> &str {
        &self.name
    }

    fn d1(&self) -> usize {
        self.a.ncols()
    }

    fn d(&self) -> usize {
        self.a.nrows()
    }

    fn contains(&self, eta: &DVector<f64>) -> bool {
        eta.len() == self.d1() && eta.iter().zip(self.lo.iter().zip(&self.hi)).all(|(e, (l, h))| l <= e && e <= h)
    }

    fn theta(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.contains(eta) {
            return Err(Error::OutOfDomain);
        }
        Ok(&self.offset + &self.a * eta)
    }

    fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        uniform_box(&self.lo, &self.hi, rng)
    }

    fn project(&self, eta: &DVector<f64>) -> DVector<f64> {
        clamp_box(eta, &self.lo, &self.hi)
    }

    fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        Some((self.lo.clone(), self.hi.clone()))
    }
}

/// `θ_j(η) = log(q_j(η)/q₀(η))` from a moment-restricted multinomial.
#[derive(Debug, Clone)]
pub struct ElMap {
    pub model: MomentModel,
}

impl CurvedMap for ElMap {
    fn name(&self) -> &str {
        "el"
    }

    fn d1(&self) -> usize {
        self.model.d1
    }

    fn d(&self) -> usize {
        self.model.dim()
    }

    fn contains(&self, eta: &DVector<f64>) -> bool {
        self.model.domain.contains(eta)
    }

    fn theta(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        theta_of_eta(&self.model, eta)
    }

    fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        match &self.model.domain {
            EtaDomain::Box { lo, hi } => uniform_box(lo, hi, rng),
            EtaDomain::Ball { center, radius } => {
                let d = center.len();
                center + random_unit(d, rng) * (radius * rng.random::<f64>().powf(1.0 / d as f64))
            }
        }
    }

    fn project(&self, eta: &DVector<f64>) -> DVector<f64> {
        match &self.model.domain {
            EtaDomain::Box { lo, hi } => clamp_box(eta, lo, hi),
            EtaDomain::Ball { center, radius } => {
                let off = eta - center;
                let r = off.norm();
                if r <= *radius {
                    eta.clone()
                } else {
                    center + off * (radius / r)
                }
            }
        }
    }

    fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        match &self.model.domain {
            EtaDomain::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            EtaDomain::Ball { center, radius } => {
                let r = DVector::from_element(center.len(), *radius);
                Some((center - &r, center + &r))
            }
        }
    }
}

/// Symmetric vectorization: diagonal, then `√2·a_ij` for `i < j`, row by row.
pub fn svec(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(if i == j { a[(i, i)] } else { SQRT_2 * 0.5 * (a[(i, j)] + a[(j, i)]) });
        }
    }
    out
}

pub fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                a[(i, i)] = v[k];
            } else {
                a[(i, j)] = v[k] / SQRT_2;
                a[(j, i)] = v[k] / SQRT_2;
            }
            k += 1;
        }
    }
    a
}

/// Precision block shared by the regression maps: eigenvalues of `Σ⁻¹` in
/// `(0, 1/λ_min)`.
#[derive(Debug, Clone, Copy)]
struct PrecisionBox {
    d_r: usize,
    lambda_min: f64,
}

impl PrecisionBox {
    fn len(&self) -> usize {
        self.d_r * (self.d_r + 1) / 2
    }

    fn contains(&self, v: &[f64]) -> bool {
        let (lo, hi) = eig_extremes(&SymmetricMatrix::symmetrize(unsvec(v, self.d_r)));
        lo > 0.0 && hi < 1.0 / self.lambda_min
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let d = self.d_r;
        let g = DMatrix::from_fn(d, d, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        });
        let q = g.qr().q();
        let top = 1.0 / self.lambda_min;
        let diag = DVector::from_fn(d, |_, _| top * (0.02 + 0.96 * rng.random::<f64>()));
        svec(&(&q * DMatrix::from_diagonal(&diag) * q.transpose()))
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        let top = (1.0 - 1e-9) / self.lambda_min;
        let clipped = SymmetricMatrix::symmetrize(unsvec(v, self.d_r)).spectral_map(|x| x.clamp(1e-6 * top, top));
        svec(clipped.as_matrix())
    }
}

/// Scales `m` to operator norm below `bound` if needed.
fn shrink_to_norm(m: &DMatrix<f64>, bound: f64) -> DMatrix<f64> {
    let norm = operator_norm(m);
    if norm < bound {
        m.clone()
    } else {
        m * ((1.0 - 1e-9) * bound / norm)
    }
}

fn regression_theta(prec: &DMatrix<f64>, pi: &DMatrix<f64>) -> DVector<f64> {
    let mut out = svec(&(-0.5 * prec));
    let t2 = pi * prec;
    for r in 0..t2.nrows() {
        for c in 0..t2.ncols() {
            out.push(t2[(r, c)]);
        }
    }
    DVector::from_vec(out)
}

/// Seemingly unrelated regressions: `η = (svec Σ⁻¹, free entries of Π)`,
/// `θ = (−½Σ⁻¹, ΠΣ⁻¹)` in the multivariate-linear coordinates.
#[derive(Debug, Clone)]
pub struct SurMap {
    pub d_r: usize,
    pub d_c: usize,
    /// `d_c × d_r`; `true` marks a free coefficient.
    pub mask: Vec<Vec<bool>>,
    pub lambda_min: f64,
    pub m_bound: f64,
    free: Vec<(usize, usize)>,
    prec: PrecisionBox,
}

impl SurMap {
    pub fn new(d_r: usize, d_c: usize, mask: Vec<Vec<bool>>, lambda_min: f64, m_bound: f64) -> Result<Self> {
        if !(lambda_min > 0.0) || !(m_bound > 1.0) {
            return Err(Error::InvalidSpec("need lambda_min > 0 and M > 1".into()));
        }
        if mask.len() != d_c || mask.iter().any(|r| r.len() != d_r) {
            return Err(Error::InvalidPattern(format!("mask must be {d_c}x{d_r}")));
        }
        if let Some(i) = mask.iter().position(|r| !r.iter().any(|&b| b)) {
            return Err(Error::InvalidPattern(format!("covariate {i} is excluded from every equation")));
        }
        let free = (0..d_c).flat_map(|r| (0..d_r).map(move |c| (r, c))).filter(|&(r, c)| mask[r][c]).collect();
        Ok(SurMap { d_r, d_c, mask, lambda_min, m_bound, free, prec: PrecisionBox { d_r, lambda_min } })
    }

    /// `η` for `(Σ, Π)`; `Π` must vanish off the mask.
    pub fn eta_of(&self, sigma: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<DVector<f64>> {
        if pi.shape() != (self.d_c, self.d_r) {
            return Err(Error::DimensionMismatch { expected: self.d_c * self.d_r, found: pi.len() });
        }
        for r in 0..self.d_c {
            for c in 0..self.d_r {
                if !self.mask[r][c] && pi[(r, c)] != 0.0 {
                    return Err(Error::InvalidPattern(format!("Pi[{r},{c}] is restricted to zero")));
                }
            }
        }
        let prec = sigma.clone().try_inverse().ok_or_else(|| Error::InvalidSpec("Sigma is singular".into()))?;
        let mut v = svec(&prec);
        v.extend(self.free.iter().map(|&(r, c)| pi[(r, c)]));
        Ok(DVector::from_vec(v))
    }

    pub fn split(&self, eta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.prec.len();
        let prec = unsvec(&eta.as_slice()[..k], self.d_r);
        let mut pi = DMatrix::zeros(self.d_c, self.d_r);
        for (i, &(r, c)) in self.free.iter().enumerate() {
            pi[(r, c)] = eta[k + i];
        }
        (prec, pi)
    }
}

impl CurvedMap for SurMap {
    fn name(&self) -> &str {
        "sur"
    }

    fn d1(&self) -> usize {
        self.prec.len() + self.free.len()
    }

    fn d(&self) -> usize {
        self.prec.len() + self.d_c * self.d_r
    }

    fn contains(&self, eta: &DVector<f64>) -> bool {
        if eta.len() != self.d1() || eta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let (_, pi) = self.split(eta);
        self.prec.contains(&eta.as_slice()[..self.prec.len()]) && operator_norm(&pi) < self.m_bound
    }

    fn theta(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.contains(eta) {
            return Err(Error::OutOfDomain);
        }
        let (prec, pi) = self.split(eta);
        Ok(regression_theta(&prec, &pi))
    }

    fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let mut v = self.prec.sample(rng);
        let mut pi = DMatrix::zeros(self.d_c, self.d_r);
        for &(r, c) in &self.free {
            pi[(r, c)] = self.m_bound * (2.0 * rng.random::<f64>() - 1.0);
        }
        let pi = shrink_to_norm(&pi, self.m_bound);
        v.extend(self.free.iter().map(|&(r, c)| pi[(r, c)]));
        DVector::from_vec(v)
    }

    fn project(&self, eta: &DVector<f64>) -> DVector<f64> {
        let k = self.prec.len();
        let mut v = self.prec.project(&eta.as_slice()[..k]);
        let (_, pi) = self.split(eta);
        let pi = shrink_to_norm(&pi, self.m_bound);
        v.extend(self.free.iter().map(|&(r, c)| pi[(r, c)]));
        DVector::from_vec(v)
    }
}

/// Single structural equation `y₁ = Y₂β + Z₁γ + v` embedded in the reduced
/// form: `η = (svec Σ⁻¹, Π₁₂, Π₂₂, γ, β)`, `θ = (−½Σ⁻¹, ΠΣ⁻¹)` with
/// `Π = [[γ + Π₁₂β, Π₁₂], [Π₂₂β, Π₂₂]]`.
#[derive(Debug, Clone)]
pub struct SsemMap {
    pub d_r: usize,
    pub d_c1: usize,
    pub d_c2: usize,
    pub lambda_min: f64,
    pub m_bound: f64,
    prec: PrecisionBox,
}

/// Unpacked structural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SsemParts {
    pub prec: DMatrix<f64>,
    pub pi12: DMatrix<f64>,
    pub pi22: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

impl SsemParts {
    /// Reduced-form coefficients, `d_c × d_r`.
    pub fn reduced_form(&self) -> DMatrix<f64> {
        let (d_c1, d_c2, k) = (self.pi12.nrows(), self.pi22.nrows(), self.beta.len());
        let mut pi = DMatrix::zeros(d_c1 + d_c2, k + 1);
        pi.view_mut((0, 0), (d_c1, 1)).copy_from(&(&self.gamma + &self.pi12 * &self.beta));
        pi.view_mut((0, 1), (d_c1, k)).copy_from(&self.pi12);
        pi.view_mut((d_c1, 0), (d_c2, 1)).copy_from(&(&self.pi22 * &self.beta));
        pi.view_mut((d_c1, 1), (d_c2, k)).copy_from(&self.pi22);
        pi
    }
}

impl SsemMap {
    pub fn new(d_r: usize, d_c1: usize, d_c2: usize, lambda_min: f64, m_bound: f64) -> Result<Self> {
        if d_r < 2 || d_c1 == 0 {
            return Err(Error::InvalidSpec("need d_r ≥ 2 and at least one included covariate".into()));
        }
        if d_c2 < d_r - 1 {
            return Err(Error::RankDeficient(format!("Pi22 is {d_c2}x{} and cannot have rank {}", d_r - 1, d_r - 1)));
        }
        if !(lambda_min > 0.0) || !(m_bound > 1.0) {
            return Err(Error::InvalidSpec("need lambda_min > 0 and M > 1".into()));
        }
        Ok(SsemMap { d_r, d_c1, d_c2, lambda_min, m_bound, prec: PrecisionBox { d_r, lambda_min } })
    }

    fn k(&self) -> usize {
        self.d_r - 1
    }

    pub fn split(&self, eta: &DVector<f64>) -> SsemParts {
        let (k, d_c1, d_c2) = (self.k(), self.d_c1, self.d_c2);
        let s = eta.as_slice();
        let mut at = self.prec.len();
        let prec = unsvec(&s[..at], self.d_r);
        let mut take = |len: usize| {
            let out = &s[at..at + len];
            at += len;
            out
        };
        let pi12 = DMatrix::from_row_slice(d_c1, k, take(d_c1 * k));
        let pi22 = DMatrix::from_row_slice(d_c2, k, take(d_c2 * k));
        let gamma = DVector::from_column_slice(take(d_c1));
        let beta = DVector::from_column_slice(take(k));
        SsemParts { prec, pi12, pi22, gamma, beta }
    }

    pub fn join(&self, p: &SsemParts) -> DVector<f64> {
        let mut v = svec(&p.prec);
        for m in [&p.pi12, &p.pi22] {
            for r in 0..m.nrows() {
                v.extend(m.row(r).iter());
            }
        }
        v.extend(p.gamma.iter());
        v.extend(p.beta.iter());
        DVector::from_vec(v)
    }

    /// `η` for structural parameters; checks the rank condition on `Π₂₂`.
    pub fn eta_of(
        &self,
        sigma: &DMatrix<f64>,
        pi12: DMatrix<f64>,
        pi22: DMatrix<f64>,
        gamma: DVector<f64>,
        beta: DVector<f64>,
    ) -> Result<DVector<f64>> {
        let k = self.k();
        if pi12.shape() != (self.d_c1, k) || pi22.shape() != (self.d_c2, k) || gamma.len() != self.d_c1 || beta.len() != k {
            return Err(Error::InvalidSpec("structural block shapes do not match".into()));
        }
        let rank = pi22.clone().svd(false, false).rank(1e-10);
        if rank != k {
            return Err(Error::RankDeficient(format!("rank(Pi22) = {rank}, need {k}")));
        }
        let prec = sigma.clone().try_inverse().ok_or_else(|| Error::InvalidSpec("Sigma is singular".into()))?;
        Ok(self.join(&SsemParts { prec, pi12, pi22, gamma, beta }))
    }

    fn bounded(&self, p: &SsemParts) -> bool {
        operator_norm(&p.reduced_form()) < self.m_bound && p.gamma.norm() < self.m_bound && p.beta.norm() < self.m_bound
    }
}

impl CurvedMap for SsemMap {
    fn name(&self) -> &str {
        "ssem"
    }

    fn d1(&self) -> usize {
        self.prec.len() + (self.d_c1 + self.d_c2) * self.k() + self.d_c1 + self.k()
    }

    fn d(&self) -> usize {
        self.prec.len() + (self.d_c1 + self.d_c2) * self.d_r
    }

    fn contains(&self, eta: &DVector<f64>) -> bool {
        if eta.len() != self.d1() || eta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.prec.contains(&eta.as_slice()[..self.prec.len()]) && self.bounded(&self.split(eta))
    }

    fn theta(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.contains(eta) {
            return Err(Error::OutOfDomain);
        }
        let p = self.split(eta);
        Ok(regression_theta(&p.prec, &p.reduced_form()))
    }

    fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let prec = unsvec(&self.prec.sample(rng), self.d_r);
        loop {
            let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| (2.0 * rng.random::<f64>() - 1.0) * self.m_bound / 2.0);
            let p = SsemParts {
                prec: prec.clone(),
                pi12: draw(self.d_c1, self.k()),
                pi22: draw(self.d_c2, self.k()),
                gamma: draw(self.d_c1, 1).column(0).into_owned(),
                beta: draw(self.k(), 1).column(0).into_owned(),
            };
            if self.bounded(&p) {
                return self.join(&p);
            }
        }
    }

    fn project(&self, eta: &DVector<f64>) -> DVector<f64> {
        let mut p = self.split(eta);
        p.prec = unsvec(&self.prec.project(&svec(&p.prec)), self.d_r);
        // shrink the coefficient blocks together until the bounds hold
        let mut scale = 1.0;
        let base = p.clone();
        while !self.bounded(&p) && scale > 1e-12 {
            scale *= 0.9;
            p.pi12 = &base.pi12 * scale;
            p.pi22 = &base.pi22 * scale;
            p.gamma = &base.gamma * scale;
            p.beta = &base.beta * scale;
        }
        self.join(&p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;

    fn sur() -> SurMap {
        SurMap::new(2, 2, vec![vec![true, false], vec![false, true]], 0.25, 2.0).unwrap()
    }

    #[test]
    fn svec_round_trip_and_norm() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let v = svec(&a);
        assert_eq!(unsvec(&v, 3), a);
        assert_abs_diff_eq!(DVector::from_vec(v).norm(), a.norm(), epsilon = 1e-12);
    }

    #[test]
    fn sur_plug_in() {
        let m = sur();
        let eta = m.eta_of(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).unwrap();
        let theta = m.theta(&eta).unwrap();
        assert_eq!(theta.as_slice(), &[-0.5, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!((m.d1(), m.d()), (5, 7));
        assert!(matches!(m.eta_of(&DMatrix::identity(2, 2), &DMatrix::from_element(2, 2, 0.1)), Err(Error::InvalidPattern(_))));
        assert!(matches!(SurMap::new(2, 2, vec![vec![true, true], vec![false, false]], 0.25, 2.0), Err(Error::InvalidPattern(_))));
    }

    #[test]
    fn sur_second_derivative_bound() {
        let m = sur();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.5]);
        let pi = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.7]);
        let eta0 = m.eta_of(&sigma, &pi).unwrap();
        let mut rng = seeded_rng(5);
        for _ in 0..50 {
            let dir = random_unit(m.d1(), &mut rng);
            let t = 1e-3;
            let second = (m.theta(&(&eta0 + &dir * t)).unwrap() - m.theta(&eta0).unwrap() * 2.0 + m.theta(&(&eta0 - &dir * t)).unwrap()) / (t * t);
            let (d1, d2) = (dir.rows(0, 3).norm(), dir.rows(3, 2).norm());
            assert!(second.norm() <= 2.0 * d1 * d2 + 1e-5, "{} > {}", second.norm(), 2.0 * d1 * d2);
        }
    }

    #[test]
    fn sur_sampling_and_projection_stay_in_psi() {
        let m = sur();
        let mut rng = seeded_rng(1);
        for _ in 0..200 {
            let eta = m.sample(&mut rng);
            assert!(m.contains(&eta));
            let far = &eta * 10.0;
            assert!(m.contains(&m.project(&far)));
        }
    }

    #[test]
    fn ssem_compatibility() {
        let m = SsemMap::new(2, 1, 1, 0.25, 3.0).unwrap();
        let zero = m
            .eta_of(
                &DMatrix::identity(2, 2),
                DMatrix::from_element(1, 1, 0.4),
                DMatrix::from_element(1, 1, 1.0),
                DVector::zeros(1),
                DVector::zeros(1),
            )
            .unwrap();
        let p = m.split(&zero);
        let rf = p.reduced_form();
        assert_eq!(rf[(0, 0)], 0.0);
        assert_eq!(rf[(1, 0)], 0.0);
        let mut rng = seeded_rng(2);
        for _ in 0..100 {
            let eta = m.sample(&mut rng);
            let p = m.split(&eta);
            let rf = p.reduced_form();
            assert!((rf.view((1, 0), (1, 1)) - &p.pi22 * &p.beta).amax() <= 1e-12);
            assert!((rf.view((0, 0), (1, 1)) - (&p.gamma + &p.pi12 * &p.beta)).amax() <= 1e-12);
            assert!(m.theta(&eta).is_ok());
            assert_eq!(m.join(&p), eta);
        }
        assert!(matches!(
            m.eta_of(&DMatrix::identity(2, 2), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DVector::zeros(1), DVector::zeros(1)),
            Err(Error::RankDeficient(_))
        ));
        assert!(matches!(SsemMap::new(3, 1, 1, 0.25, 3.0), Err(Error::RankDeficient(_))));
    }
}
