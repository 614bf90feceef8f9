use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use bvmlab_core::expfam::{ExpFamilyModel, GaussianLocation, Multinomial};
use bvmlab_core::local::{
    alpha_moment_distance, tv_distance_importance, tv_distance_quadrature, DistanceMethod, GridSpec, LocalFrame, LocalPosterior, PriorSpec,
    SampleSummary,
};

fn posterior(model: ExpFamilyModel, x_bar: &[f64], n: usize) -> LocalPosterior {
    let frame = Arc::new(LocalFrame::new(model).unwrap());
    let summary = SampleSummary::from_mean(&frame, DVector::from_column_slice(x_bar), n).unwrap();
    LocalPosterior::new(frame, summary, PriorSpec::Flat)
}

/// `∫|p − φ|` for the binary posterior under a flat prior on the logit,
/// from the success probability alone, by a fine trapezoid rule.
fn binary_tv_oracle(p1: f64, x_bar: f64, n: usize) -> f64 {
    let nf = n as f64;
    let theta0 = (p1 / (1.0 - p1)).ln();
    let j = (p1 * (1.0 - p1)).sqrt();
    let delta = nf.sqrt() * (x_bar - p1) / j;
    let log_lik = |u: f64| {
        let theta = theta0 + u / (j * nf.sqrt());
        nf * (x_bar * theta - theta.exp().ln_1p())
    };
    let (lo, hi, m) = (delta - 14.0, delta + 14.0, 400_000);
    let h = (hi - lo) / m as f64;
    let us: Vec<f64> = (0..=m).map(|i| lo + i as f64 * h).collect();
    let peak = us.iter().map(|&u| log_lik(u)).fold(f64::NEG_INFINITY, f64::max);
    let weight = |i: usize| if i == 0 || i == m { 0.5 * h } else { h };
    let z: f64 = us.iter().enumerate().map(|(i, &u)| weight(i) * (log_lik(u) - peak).exp()).sum();
    us.iter()
        .enumerate()
        .map(|(i, &u)| {
            let phi = (-0.5 * (u - delta).powi(2)).exp() / (2.0 * std::f64::consts::PI).sqrt();
            weight(i) * ((log_lik(u) - peak).exp() / z - phi).abs()
        })
        .sum()
}

#[test]
fn binary_tv_matches_brute_force() {
    for (p1, x_bar, n) in [(0.3, 0.35, 200), (0.5, 0.5, 50), (0.1, 0.08, 1000)] {
        let post = posterior(Multinomial::from_probs(&[1.0 - p1, p1]).unwrap(), &[x_bar], n);
        let est = tv_distance_quadrature(&post, &post.reference(), &GridSpec::for_dim(1)).unwrap();
        let oracle = binary_tv_oracle(p1, x_bar, n);
        assert!((est.value - oracle).abs() < 1e-6, "p1 = {p1}, n = {n}: {} vs {oracle}", est.value);
    }
}

#[test]
fn gaussian_posterior_is_its_reference() {
    let model = ExpFamilyModel::new(Arc::new(GaussianLocation::standard(2)), DVector::zeros(2)).unwrap();
    let post = posterior(model, &[0.3, -0.2], 100);
    let est = tv_distance_quadrature(&post, &post.reference(), &GridSpec::for_dim(2)).unwrap();
    assert!(est.value < 1e-8, "{est:?}");
}

#[test]
fn importance_agrees_with_quadrature() {
    let post = posterior(Multinomial::from_probs(&[0.5, 0.3, 0.2]).unwrap(), &[0.33, 0.18], 150);
    let quad = tv_distance_quadrature(&post, &post.reference(), &GridSpec::for_dim(2)).unwrap();
    let imp = tv_distance_importance(&post, &post.reference(), 1 << 16, 9).unwrap();
    assert!((quad.value - imp.value).abs() <= 4.0 * imp.error + quad.error + 1e-3, "{quad:?} vs {imp:?}");
}

#[test]
fn estimates_do_not_depend_on_the_pool_size() {
    let post = posterior(Multinomial::from_probs(&[0.5, 0.3, 0.2]).unwrap(), &[0.33, 0.18], 150);
    let estimate = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let imp = tv_distance_importance(&post, &post.reference(), 1 << 14, 3).unwrap();
            let quad = tv_distance_quadrature(&post, &post.reference(), &GridSpec::for_dim(2)).unwrap();
            (imp.value.to_bits(), quad.value.to_bits())
        })
    };
    assert_eq!(estimate(1), estimate(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tv_is_bounded_and_alpha_zero_is_tv(x in 0.05f64..0.95, n in 20usize..2000) {
        let post = posterior(Multinomial::from_probs(&[0.6, 0.4]).unwrap(), &[x], n);
        let grid = GridSpec::for_dim(1);
        let tv = tv_distance_quadrature(&post, &post.reference(), &grid).unwrap();
        let a0 = alpha_moment_distance(&post, &post.reference(), 0.0, &DistanceMethod::Quadrature(grid), 0).unwrap();
        prop_assert!((0.0..=2.0).contains(&tv.value));
        prop_assert_eq!(tv.value.to_bits(), a0.value.to_bits());
    }
}
