use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::*;
use crate::expfam::{GaussianLocation, Multinomial};
use crate::local::SampleSummary;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn binary_posterior(eta0: f64, n: usize, ones: usize) -> CurvedLocalPosterior {
    let model = el_mean_toy(eta0).unwrap();
    let x_bar = DVector::from_element(1, ones as f64 / n as f64);
    let summary = SampleSummary::from_mean(&model.frame, x_bar, n).unwrap();
    CurvedLocalPosterior::from_summary(&model, PriorSpec::Flat, summary).unwrap()
}

/// `θ = η²` on `[−1, 1]`: `θ(−½) = θ(½)`.
#[derive(Debug)]
struct Fold;

impl CurvedMap for Fold {
    fn name(&self) -> &str {
        "fold"
    }
    fn d1(&self) -> usize {
        1
    }
    fn d(&self) -> usize {
        1
    }
    fn contains(&self, eta: &DVector<f64>) -> bool {
        eta[0].abs() <= 1.0
    }
    fn theta(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.contains(eta) {
            return Err(Error::OutOfDomain);
        }
        Ok(eta.map(|e| e * e))
    }
    fn sample(&self, rng: &mut crate::rng::Rng) -> DVector<f64> {
        DVector::from_element(1, 2.0 * rng.random::<f64>() - 1.0)
    }
    fn project(&self, eta: &DVector<f64>) -> DVector<f64> {
        eta.map(|e| e.clamp(-1.0, 1.0))
    }
}

fn linear_on_trinomial(a: DMatrix<f64>, eta0: DVector<f64>, half: f64) -> CurvedModel {
    let d1 = a.ncols();
    let w = DVector::from_element(d1, half);
    let map = LinearMap::new("lin", a, DVector::zeros(3), &eta0 - &w, &eta0 + &w).unwrap();
    CurvedModel::new(Arc::new(map), Arc::new(Multinomial::new(3)), eta0).unwrap()
}

#[test]
fn linear_map_has_no_remainder() {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
    let model = linear_on_trinomial(a.clone(), DVector::from_vec(vec![0.2, -0.1]), 5.0);
    let lin = linearize(&model, 400, 1.0, 200, 1).unwrap();
    assert!((&lin.g_raw - &a).amax() < 1e-9);
    assert!((&lin.g - model.frame.j.as_matrix() * &a).amax() < 1e-9);
    assert!(lin.delta1 < 1e-9, "{}", lin.delta1);
    assert!(lin.delta2 < 1e-9, "{}", lin.delta2);
}

#[test]
fn logit_remainder_matches_taylor() {
    let model = el_mean_toy(0.5).unwrap();
    let lin = linearize(&model, 400, 1.0, 500, 2).unwrap();
    assert_abs_diff_eq!(lin.g_raw[(0, 0)], 4.0, epsilon = 1e-6);
    // J = √(¼)
    assert_abs_diff_eq!(lin.g[(0, 0)], 2.0, epsilon = 1e-6);
    let oracle = 0.5 * 20.0 * (logit(0.55) - 4.0 * 0.05);
    assert!(lin.delta1 <= 2.0 * oracle && lin.delta1 >= 0.5 * oracle, "{} vs {}", lin.delta1, oracle);
    assert!(lin.delta2 < 1e-5);
    assert_abs_diff_eq!(lin.delta1_sqrt_d, lin.delta1, epsilon = 0.0);
}

#[test]
fn sur_has_no_multiplicative_part() {
    let model = sur_toy().unwrap();
    let lin = linearize(&model, 10_000, 1.0, 300, 3).unwrap();
    assert!(lin.delta2 < 1e-5, "{}", lin.delta2);
    assert!(lin.delta1 > 0.0 && lin.gram_min > 0.0);
}

#[test]
fn ssem_linearizes() {
    let model = ssem_toy().unwrap();
    let lin = linearize(&model, 10_000, 1.0, 100, 4).unwrap();
    assert!(lin.gram_min > GRAM_FLOOR);
}

#[test]
fn linearize_checks_preconditions() {
    let model = el_mean_toy(0.3).unwrap();
    assert!(matches!(linearize(&model, 4, 1.0, 10, 0), Err(Error::PreconditionViolated(_))));
    let flat =
        LinearMap::new("flat", DMatrix::zeros(3, 1), DVector::zeros(3), DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)).unwrap();
    let model = CurvedModel::new(Arc::new(flat), Arc::new(Multinomial::new(3)), DVector::zeros(1)).unwrap();
    assert!(matches!(linearize(&model, 100, 1.0, 10, 0), Err(Error::DegenerateJacobian { .. })));
}

#[test]
fn injectivity_examples() {
    let q = DMatrix::from_row_slice(3, 2, &[0.6, 0.0, 0.8, 0.0, 0.0, 1.0]);
    let iso = linear_on_trinomial(q, DVector::zeros(2), 1.0);
    let r = injectivity_floor(&iso, 2000, 1);
    assert_abs_diff_eq!(r.floor, 1.0, epsilon = 1e-9);
    assert!(!r.flagged);

    let sur = sur_toy().unwrap();
    let r = injectivity_floor(&sur, 4000, 2);
    assert!(r.floor >= 0.25 / (4.0 * 2.0) - 1e-6, "{}", r.floor);

    let fold = CurvedModel::new(Arc::new(Fold), Arc::new(Multinomial::new(1)), DVector::from_element(1, 0.5)).unwrap();
    let r = injectivity_floor(&fold, 2000, 3);
    assert!(r.flagged, "{}", r.floor);
    assert!((r.worst_eta[0] + 0.5).abs() < 1e-2);
}

#[test]
fn s_statistic_examples() {
    let model = el_mean_toy(0.3).unwrap();
    let lin = linearize(&model, 100, 1.0, 10, 0).unwrap();
    let mu = model.frame.mu.clone();
    assert_eq!(s_statistic(&lin, &mu, &mu, 100).unwrap()[0], 0.0);

    let eye = DMatrix::identity(3, 3);
    let x = DVector::from_vec(vec![0.3, -0.2, 0.5]);
    let s = s_from(&eye, &x, &DVector::zeros(3), 25).unwrap();
    assert!((s - &x * 5.0).amax() < 1e-12);

    let mut rng = crate::rng::seeded_rng(9);
    let g = DMatrix::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
    let v = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
    let s = s_from(&g, &v, &DVector::zeros(4), 16).unwrap();
    let oracle = g.clone().svd(true, true).solve(&(&v * 4.0), 1e-14).unwrap();
    assert!((&s - &oracle).amax() < 1e-10);
    // noise orthogonal to range(G) does not move s
    let resid = &v * 4.0 - &g * &oracle;
    let s2 = s_from(&g, &(&v + &resid * 0.25), &DVector::zeros(4), 16).unwrap();
    assert!((s2 - s).amax() < 1e-10);
}

#[test]
fn posterior_at_origin_is_prior() {
    let model = el_mean_toy(0.3).unwrap();
    let prior = PriorSpec::Lipschitz { k: 1.5, center: DVector::from_element(1, 0.2) };
    let summary = SampleSummary::from_mean(&model.frame, DVector::from_element(1, 0.41), 200).unwrap();
    let cp = CurvedLocalPosterior::from_summary(&model, prior.clone(), summary).unwrap();
    assert_abs_diff_eq!(cp.log_unnormalized(&DVector::zeros(1)), prior.log_density(model.theta0()), epsilon = 1e-14);
}

#[test]
fn binary_posterior_matches_scalar_formula() {
    let (eta0, n) = (0.3, 400);
    let cp = binary_posterior(eta0, n, 131);
    let x_bar = 131.0 / n as f64;
    let mut rng = crate::rng::seeded_rng(4);
    for _ in 0..100 {
        let gamma = 6.0 * (rng.random::<f64>() - 0.5);
        let eta = eta0 + gamma / 20.0;
        let oracle = n as f64 * (x_bar * (logit(eta) - logit(eta0)) + (1.0 - eta).ln() - (1.0 - eta0).ln());
        let g = DVector::from_element(1, gamma);
        assert!((cp.log_unnormalized(&g) - oracle).abs() < 1e-9 * (1.0 + oracle.abs()));
        assert!((cp.log_unnormalized(&g) - log_z_at_gamma(&cp, &g)).abs() < 1e-10 * (1.0 + oracle.abs()));
    }
    assert_eq!(cp.log_unnormalized(&DVector::from_element(1, 20.0 * 0.7)), f64::NEG_INFINITY);
}

#[test]
fn identity_embedding_reproduces_local_posterior() {
    let base = Multinomial::from_probs(&[0.3, 0.45, 0.25]).unwrap();
    let model = identity_embed(&base, 5.0).unwrap();
    let data = model.sample_data(300, 7).unwrap();
    let cp = curved_local_posterior(&model, PriorSpec::Flat, &data, 300).unwrap();
    let mut rng = crate::rng::seeded_rng(1);
    for _ in 0..100 {
        let gamma = DVector::from_fn(2, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
        let u = model.frame.j.as_matrix() * &gamma;
        assert!((cp.log_unnormalized(&gamma) - cp.base.log_unnormalized(&u)).abs() < 1e-10);
    }
    // the reference pushes forward to N(Δₙ, I)
    assert!((model.frame.j.as_matrix() * &cp.s - &cp.base.summary.delta_n).amax() < 1e-9);

    let grid = DistanceMethod::Quadrature(GridSpec::for_dim(2));
    let curved = curved_tv(&cp, &grid, 0).unwrap();
    let flat = crate::local::tv_distance_quadrature(&cp.base, &cp.base.reference(), &GridSpec::for_dim(2)).unwrap();
    assert!((curved.value - flat.value).abs() <= curved.error + flat.error + 1e-6, "{curved:?} vs {flat:?}");
}

#[test]
fn gaussian_posterior_is_its_reference() {
    let base = ExpFamilyModel::new(Arc::new(GaussianLocation::standard(1)), DVector::zeros(1)).unwrap();
    let model = identity_embed(&base, 50.0).unwrap();
    let data = model.sample_data(50, 3).unwrap();
    let cp = curved_local_posterior(&model, PriorSpec::Flat, &data, 50).unwrap();
    let tv = curved_tv(&cp, &DistanceMethod::Quadrature(GridSpec::for_dim(1)), 0).unwrap();
    assert!(tv.value <= tv.error + 1e-8, "{tv:?}");
}

#[test]
fn binary_tv_decays() {
    let grid = DistanceMethod::Quadrature(GridSpec::for_dim(1));
    let small = curved_tv(&binary_posterior(0.3, 100, 30), &grid, 0).unwrap();
    let large = curved_tv(&binary_posterior(0.3, 6400, 1920), &grid, 0).unwrap();
    assert!(large.value + large.error < small.value - small.error, "{small:?} {large:?}");
}

#[test]
fn tv_invariant_under_rotation() {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 0.9, 0.3, 0.3]);
    let c = 0.6f64;
    let rot = DMatrix::from_row_slice(2, 2, &[c, -(1.0 - c * c).sqrt(), (1.0 - c * c).sqrt(), c]);
    let m1 = linear_on_trinomial(a.clone(), DVector::zeros(2), 20.0);
    let m2 = linear_on_trinomial(&a * &rot, DVector::zeros(2), 20.0);
    let data = m1.sample_data(500, 2).unwrap();
    let grid = DistanceMethod::Quadrature(GridSpec::for_dim(2));
    let t1 = curved_tv(&curved_local_posterior(&m1, PriorSpec::Flat, &data, 500).unwrap(), &grid, 0).unwrap();
    let t2 = curved_tv(&curved_local_posterior(&m2, PriorSpec::Flat, &data, 500).unwrap(), &grid, 0).unwrap();
    assert!((t1.value - t2.value).abs() <= t1.error + t2.error + 1e-6, "{t1:?} {t2:?}");
}

#[test]
fn tail_mass_examples() {
    let small = binary_posterior(0.3, 100, 30);
    let large = binary_posterior(0.3, 6400, 1920);
    let huge = tail_mass_audit(&small, 1e3, None).unwrap();
    assert_eq!(huge.ratio, 0.0);
    let mut last = 1.0;
    for k in [0.0, 0.25, 0.5, 1.0, 2.0, 5.0] {
        let r = tail_mass_audit(&small, k, None).unwrap().ratio;
        assert!((0.0..=1.0).contains(&r));
        assert!(r <= last + 1e-12);
        last = r;
    }
    // the tail beyond k̄√d shrinks towards its Gaussian limit as n grows
    for k in [2.0, 3.0] {
        let ratios: Vec<f64> =
            [100usize, 400, 1600, 6400].iter().map(|&n| tail_mass_audit(&binary_posterior(0.3, n, 3 * n / 10), k, None).unwrap().ratio).collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }
    // at k̄ = 5 both sit near e^{-60}
    for cp in [&small, &large] {
        assert!(tail_mass_audit(cp, 5.0, None).unwrap().ratio < 1e-20);
    }
    assert!(matches!(
        tail_mass_audit(
            &curved_local_posterior(&sur_toy().unwrap(), PriorSpec::Flat, &sur_toy().unwrap().sample_data(50, 1).unwrap(), 50).unwrap(),
            1.0,
            None
        ),
        Err(Error::DimensionTooLarge { .. })
    ));
}

#[test]
fn named_instances() {
    for name in ["el-mean", "sur-toy", "ssem-toy"] {
        let m = curved_by_name(name, None).unwrap();
        assert!((m.map.theta(&m.eta0).unwrap() - m.theta0()).amax() < 1e-12);
        assert!(m.frame.model.in_domain(m.theta0()));
    }
    assert!(curved_by_name("identity-embed", None).is_err());
    assert!(curved_by_name("nope", None).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ell_is_z_at_u_gamma(ones in 10usize..190, gamma in -5.0f64..5.0) {
            let cp = binary_posterior(0.4, 200, ones);
            let g = DVector::from_element(1, gamma);
            let direct = cp.log_unnormalized(&g);
            prop_assert!((direct - log_z_at_gamma(&cp, &g)).abs() < 1e-10 * (1.0 + direct.abs()));
        }

        #[test]
        fn tail_ratio_nonincreasing(k1 in 0.0f64..3.0, k2 in 0.0f64..3.0) {
            let cp = binary_posterior(0.3, 100, 36);
            let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
            let grid = Some(GridSpec::new(512, 10.0));
            let a = tail_mass_audit(&cp, lo, grid).unwrap().ratio;
            let b = tail_mass_audit(&cp, hi, grid).unwrap().ratio;
            prop_assert!(b <= a + 1e-12);
        }
    }
}
