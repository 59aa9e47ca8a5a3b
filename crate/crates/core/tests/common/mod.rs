#![allow(dead_code)]

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use tsde_core::bayes::PriorSpec;
use tsde_core::control::SupportSet;
use tsde_core::sim::RegretRecord;
use tsde_core::tsde::EpisodeEnd;

pub type History = Vec<(DVector<f64>, DVector<f64>)>;

/// Positive root of `b^2 S^2 + (R(1 - a^2) - Q b^2) S - Q R = 0`.
pub fn scalar_riccati_oracle(a: f64, b: f64, q: f64, r: f64) -> f64 {
    if b == 0.0 {
        return q / (1.0 - a * a);
    }
    let qa = b * b;
    let qb = r * (1.0 - a * a) - q * b * b;
    let qc = -q * r;
    (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random SPD matrix with eigenvalues roughly in `[0.1, 3]`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, d, d, 0.5);
    let mut s = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
    s = (&s + s.transpose()) * 0.5;
    s
}

/// Prior and a history of `(z_t, x_{t+1})` pairs from random regressors.
pub fn random_history<R: Rng>(rng: &mut R, n: usize, m: usize, len: usize) -> (PriorSpec, History) {
    let d = n + m;
    let theta_true = gaussian_matrix(rng, d, n, 0.5);
    let prior = PriorSpec::new(gaussian_matrix(rng, d, n, 1.0), random_spd(rng, d), SupportSet::All)
        .unwrap();
    let history = (0..len)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = theta_true.transpose() * &z + w;
            (z, x)
        })
        .collect();
    (prior, history)
}

/// Normal-equations posterior computed with plain LU inverses.
pub fn oracle_posterior(prior: &PriorSpec, history: &[(DVector<f64>, DVector<f64>)]) -> (DMatrix<f64>, DMatrix<f64>) {
    let prior_info = prior.sigma.clone().try_inverse().unwrap();
    let mut info = prior_info.clone();
    let mut moment = &prior_info * &prior.theta_hat;
    for (z, x) in history {
        info += z * z.transpose();
        moment += z * x.transpose();
    }
    let sigma = info.try_inverse().unwrap();
    let theta = &sigma * moment;
    (theta, sigma)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Violations found by replaying a run's episodes against the stopping rule.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ReplayReport {
    pub episodes: usize,
    /// Completed episodes with `T_k > T_{k-1} + 1`.
    pub growth: usize,
    /// Interior steps with `log det sigma_t < log det sigma_{t_k} - ln 2`.
    pub determinant: usize,
    /// Episodes that ended later than the first qualifying step, or at a
    /// step that does not qualify.
    pub boundary: usize,
}

/// Replays a stationary run: every episode must end exactly at the first
/// `t` meeting the stopping rule.
pub fn replay_stationary(record: &RegretRecord) -> ReplayReport {
    let mut rep = ReplayReport::default();
    let ld = &record.log_det;
    let mut prev_len: Option<usize> = None;
    for ep in &record.episodes {
        rep.episodes += 1;
        let t_k = ep.start;
        let ld_start = ld[t_k - 1];
        if ld_start != ep.log_det_at_start {
            rep.boundary += 1;
        }
        let end = t_k + ep.length;
        for t in t_k..end {
            let hit = t > t_k + ep.t_prev || ld[t - 1] < ld_start - LN_2;
            if hit {
                rep.boundary += 1;
            }
            if t > t_k && ld[t - 1] < ld_start - LN_2 {
                rep.determinant += 1;
            }
        }
        if ep.end == EpisodeEnd::Criterion {
            let qualifies = end > t_k + ep.t_prev || ld[end - 1] < ld_start - LN_2;
            if !qualifies {
                rep.boundary += 1;
            }
            if ep.length > ep.t_prev + 1 || prev_len.is_some_and(|p| ep.length > p + 1) {
                rep.growth += 1;
            }
        }
        prev_len = Some(ep.length);
    }
    rep
}

/// Re-initialization times implied by gaps `l^q`: `r_l = ceil(r_{l-1} + l^q)`
/// with `r_0 = 1`, up to `horizon`.
pub fn expected_reinit_times(q: f64, horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut l, mut last) = (1u32, 1usize);
    loop {
        let t = (last as f64 + f64::from(l).powf(q)).ceil() as usize;
        if t > horizon {
            return out;
        }
        out.push(t);
        last = t;
        l += 1;
    }
}
