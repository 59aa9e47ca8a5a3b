mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsde_core::bayes::{self, information_matrix, PosteriorState, PriorSpec};
use tsde_core::control::{CostParams, RiccatiOptions, SupportSet, SystemParams};

use common::*;

fn fold(prior: &PriorSpec, history: &History) -> Vec<PosteriorState> {
    let mut state = prior.to_posterior().unwrap();
    let mut trace = vec![state.clone()];
    for (z, x) in history {
        state.update(z, x).unwrap();
        trace.push(state.clone());
    }
    trace
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursive_matches_batch(seed in any::<u64>(), n in 1usize..4, m in 1usize..4, len in 0usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (prior, history) = random_history(&mut rng, n, m, len);
        let last = fold(&prior, &history).pop().unwrap();
        let (theta, sigma) = oracle_posterior(&prior, &history);
        prop_assert!(max_abs_diff(last.theta_hat(), &theta) < 1e-8);
        prop_assert!(max_abs_diff(last.sigma(), &sigma) < 1e-8);
        let batch = bayes::batch_posterior(&prior, &history).unwrap();
        prop_assert!(max_abs_diff(batch.theta_hat(), &theta) < 1e-8);
        prop_assert_eq!(batch.t(), last.t());
    }

    #[test]
    fn information_form_accumulates_outer_products(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, len in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (prior, history) = random_history(&mut rng, n, m, len);
        let last = fold(&prior, &history).pop().unwrap();
        let mut expected = prior.sigma.clone().try_inverse().unwrap();
        for (z, _) in &history {
            expected += z * z.transpose();
        }
        let info = information_matrix(&last).unwrap();
        prop_assert!(max_abs_diff(&info, &expected) <= 1e-8 * expected.amax().max(1.0));
    }

    #[test]
    fn determinant_lemma_holds_each_step(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, len in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (prior, history) = random_history(&mut rng, n, m, len);
        let trace = fold(&prior, &history);
        for (i, (z, _)) in history.iter().enumerate() {
            let before = trace[i].sigma().determinant();
            let after = trace[i + 1].sigma().determinant();
            let lemma = before / (1.0 + z.dot(&(trace[i].sigma() * z)));
            prop_assert!(((after - lemma) / lemma).abs() < 1e-8);
            prop_assert!((trace[i + 1].log_det() - after.ln()).abs() < 1e-8);
            prop_assert!(trace[i + 1].log_det() <= trace[i].log_det());
        }
    }

    #[test]
    fn sigma_stays_symmetric_positive_definite(seed in any::<u64>(), len in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (prior, history) = random_history(&mut rng, 2, 1, len);
        let last = fold(&prior, &history).pop().unwrap();
        let s = last.sigma();
        prop_assert_eq!(s, &s.transpose());
        prop_assert!(s.clone().cholesky().is_some());
    }
}

fn sample_moments(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn unrestricted_sampler_has_posterior_marginals() {
    // Column covariance [[0.3, 0.1], [0.1, 0.2]] around mean (0.5, 0.4);
    // every draw with b != 0 has a solvable Riccati equation here.
    let sigma = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
    let state = PosteriorState::new(DMatrix::from_column_slice(2, 1, &[0.5, 0.4]), sigma.clone()).unwrap();
    let cost = CostParams::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 100_000;
    let mut a = Vec::with_capacity(draws);
    let mut b = Vec::with_capacity(draws);
    let opts = RiccatiOptions::default();
    for _ in 0..draws {
        let s = bayes::sample_parameter(&state, &SupportSet::All, &cost, &opts, &mut rng, 10).unwrap();
        a.push(s.params.theta()[(0, 0)]);
        b.push(s.params.theta()[(1, 0)]);
    }
    let n = draws as f64;
    for (xs, mu, var) in [(&a, 0.5, 0.3), (&b, 0.4, 0.2)] {
        let (m, v) = sample_moments(xs);
        assert!((m - mu).abs() < 3.0 * (var / n).sqrt(), "mean {m} vs {mu}");
        // Var of the sample variance is 2 var^2 / (n - 1) for Gaussians.
        assert!((v - var).abs() < 3.0 * (2.0 * var * var / (n - 1.0)).sqrt(), "var {v} vs {var}");
    }
    let cov = a.iter().zip(&b).map(|(x, y)| (x - 0.5) * (y - 0.4)).sum::<f64>() / n;
    // Var of the product of correlated normals is s_aa s_bb + s_ab^2.
    assert!((cov - 0.1).abs() < 3.0 * ((0.3 * 0.2 + 0.01) / n).sqrt(), "cov {cov}");
}

#[test]
fn norm_ball_sampler_is_the_truncated_gaussian() {
    // Isotropic N(0, s^2 I_2) in a ball of radius e centered at the mean:
    // |X|^2 / s^2 is chi-square(2), so E[|X|^2 | |X| < e] has a closed form.
    let s2: f64 = 0.25;
    let eps: f64 = 0.6;
    let state = PosteriorState::new(DMatrix::from_column_slice(2, 1, &[0.2, 1.0]), DMatrix::identity(2, 2) * s2).unwrap();
    let omega = SupportSet::norm_ball(state.theta_hat().clone(), eps).unwrap();
    let cost = CostParams::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut radii2 = Vec::with_capacity(draws);
    let mut attempts = 0usize;
    for _ in 0..draws {
        let s = bayes::sample_parameter(&state, &omega, &cost, &RiccatiOptions::default(), &mut rng, 1000).unwrap();
        attempts += s.attempts;
        let d = s.params.theta() - state.theta_hat();
        let r2 = d.norm_squared();
        assert!(r2 < eps * eps);
        radii2.push(r2);
    }
    let c = eps * eps / (2.0 * s2);
    let p_accept = 1.0 - (-c).exp();
    // E[R^2 | R^2 < e^2] for R^2 ~ 2 s^2 Exp(1).
    let mean_r2 = 2.0 * s2 * (1.0 - (-c).exp() * (1.0 + c)) / p_accept;
    let (m, v) = sample_moments(&radii2);
    assert!((m - mean_r2).abs() < 3.0 * (v / draws as f64).sqrt(), "E|X|^2 {m} vs {mean_r2}");
    let rate = draws as f64 / attempts as f64;
    let se = (p_accept * (1.0 - p_accept) / attempts as f64).sqrt();
    assert!((rate - p_accept).abs() < 3.0 * se, "acceptance {rate} vs {p_accept}");
}

#[test]
fn spectral_support_draws_all_stabilize_the_truth() {
    let truth = SystemParams::from_ab(&DMatrix::from_element(1, 1, 0.9), &DMatrix::from_element(1, 1, 0.5)).unwrap();
    let omega = SupportSet::spectral_radius_ball(truth.clone(), 0.99).unwrap();
    let state = PosteriorState::new(DMatrix::from_element(2, 1, 1.0), DMatrix::identity(2, 2)).unwrap();
    let cost = CostParams::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let s = bayes::sample_parameter(&state, &omega, &cost, &RiccatiOptions::default(), &mut rng, 10_000).unwrap();
        let cl = 0.9 + 0.5 * s.riccati.gain[(0, 0)];
        assert!(cl.abs() <= 0.99 + 1e-9);
    }
}

#[test]
fn long_history_keeps_log_det_reconciled() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (prior, history) = random_history(&mut rng, 1, 1, 5000);
    let last = fold(&prior, &history).pop().unwrap();
    assert!((last.log_det() - last.log_det_exact().unwrap()).abs() < 1e-6);
    let z = DVector::from_element(2, 1.0);
    assert!(last.clone().update(&z, &DVector::from_element(2, 0.0)).is_err());
}
