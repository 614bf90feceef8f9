//! Maximum likelihood over `Ψ` by projected quasi-Newton with restarts.

use nalgebra::{DMatrix, DVector};

use super::CurvedModel;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{seeded_rng, stream_seed};

pub const MLE_DEFAULT_STARTS: usize = 10;
const MAX_ITER: usize = 300;
const MAX_HALVINGS: usize = 40;
const GRAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub eta_hat: DVector<f64>,
    /// `‖η̂ − η₀‖`.
    pub norm_error: f64,
    /// Average log-likelihood `⟨x̄, θ(η̂)⟩ − ψ(θ(η̂))`.
    pub objective: f64,
    pub converged_starts: usize,
}

/// Maximizes `⟨x̄, θ(η)⟩ − ψ(θ(η))` over `Ψ` from `η₀` and `starts − 1`
/// random points of `Ψ`; the best converged start wins.
pub fn curved_mle(model: &CurvedModel, x_bar: &DVector<f64>, starts: usize, seed: u64) -> Result<MleResult> {
    if starts == 0 {
        return Err(Error::InvalidSpec("curved_mle needs at least one start".into()));
    }
    if x_bar.len() != model.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), found: x_bar.len() });
    }
    let objective = |eta: &DVector<f64>| -> f64 {
        match model.theta_checked(eta) {
            Some(t) => x_bar.dot(&t) - model.frame.model.family().log_partition(&t),
            None => f64::NEG_INFINITY,
        }
    };
    let runs = par::map_range(starts, |k| {
        let start = if k == 0 {
            model.eta0.clone()
        } else {
            let mut rng = seeded_rng(stream_seed(seed, k));
            model.map.sample(&mut rng)
        };
        ascend(&objective, |e| model.map.project(e), start)
    });
    let converged: Vec<_> = runs.into_iter().flatten().collect();
    let converged_starts = converged.len();
    let (eta_hat, best) = converged
        .into_iter()
        .fold(None, |acc: Option<(DVector<f64>, f64)>, (e, f)| match acc {
            Some((_, fa)) if fa >= f => acc,
            _ => Some((e, f)),
        })
        .ok_or(Error::NoConvergedStart)?;
    Ok(MleResult { norm_error: (&eta_hat - &model.eta0).norm(), eta_hat, objective: best, converged_starts })
}

fn gradient(f: &impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, fx: f64) -> Option<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        let (fp, fm) = (f(&p), f(&m));
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => return None,
        };
    }
    Some(g)
}

/// BFGS on `−f` with projected backtracking steps. `None` when the start is
/// infeasible or no step makes progress from it.
fn ascend(f: &impl Fn(&DVector<f64>) -> f64, project: impl Fn(&DVector<f64>) -> DVector<f64>, start: DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let mut x = project(&start);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return None;
    }
    let dim = x.len();
    let mut h_inv = DMatrix::identity(dim, dim);
    let mut g = gradient(f, &x, fx)?;
    let mut moved = false;
    for _ in 0..MAX_ITER {
        if g.norm() <= GRAD_TOL * (1.0 + fx.abs()) {
            return Some((x, fx));
        }
        // ascent direction for f
        let mut p = &h_inv * &g;
        if p.dot(&g) <= 0.0 {
            h_inv = DMatrix::identity(dim, dim);
            p = g.clone();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = project(&(&x + &p * alpha));
            let fc = f(&cand);
            let step = &cand - &x;
            if fc.is_finite() && fc >= fx + 1e-4 * g.dot(&step) && step.norm() > 0.0 {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // no progress along the projected direction: stationary up to resolution
            let stalled_at_start = !moved && g.norm() > 1e-5 * (1.0 + fx.abs());
            return (!stalled_at_start).then_some((x, fx));
        };
        let gn = gradient(f, &xn, fnew)?;
        let s = &xn - &x;
        let y = &g - &gn;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let left = &eye - &s * y.transpose() * rho;
            h_inv = &left * &h_inv * left.transpose() + &s * s.transpose() * rho;
        }
        x = xn;
        fx = fnew;
        g = gn;
        moved = true;
    }
    Some((x, fx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curved::{el_mean_toy, identity_embed, sur_toy};
    use crate::expfam::Multinomial;

    #[test]
    fn population_optimum_on_linear_map() {
        let base = Multinomial::from_probs(&[0.2, 0.3, 0.5]).unwrap();
        let model = identity_embed(&base, 3.0).unwrap();
        let eta_star = model.eta0.clone() + DVector::from_vec(vec![0.4, -0.3]);
        let x_bar = model.frame.model.grad(&eta_star).unwrap();
        let r = curved_mle(&model, &x_bar, MLE_DEFAULT_STARTS, 3).unwrap();
        assert!((r.eta_hat - eta_star).amax() < 1e-6);
    }

    #[test]
    fn binary_mle_is_sample_mean() {
        let model = el_mean_toy(0.3).unwrap();
        let x_bar = DVector::from_element(1, 0.37);
        let r = curved_mle(&model, &x_bar, 1, 0).unwrap();
        assert!((r.eta_hat[0] - 0.37).abs() < 1e-6);
        let r10 = curved_mle(&model, &x_bar, 10, 0).unwrap();
        assert!((r10.eta_hat[0] - r.eta_hat[0]).abs() < 1e-6);
        assert!((r.norm_error - 0.07).abs() < 1e-6);
    }

    #[test]
    fn sur_starts_agree() {
        let model = sur_toy().unwrap();
        let data = model.sample_data(4000, 11).unwrap();
        let x_bar = DVector::from_iterator(model.d(), data.row_mean().iter().copied());
        let one = curved_mle(&model, &x_bar, 1, 5).unwrap();
        let many = curved_mle(&model, &x_bar, 10, 5).unwrap();
        assert!((one.eta_hat - &many.eta_hat).amax() < 1e-4);
        assert!(many.norm_error < 0.2);
    }

    #[test]
    fn zero_starts_rejected() {
        let model = el_mean_toy(0.3).unwrap();
        assert!(curved_mle(&model, &DVector::from_element(1, 0.3), 0, 0).is_err());
    }
}
