//! Gaussian posterior over the stacked system parameter.
//!
//! Every column of `theta` has its own mean but all columns share one
//! covariance, so a single `d x d` matrix and its log-determinant describe
//! the spread of the whole parameter. The support restriction is applied
//! only when sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{self, CostParams, RiccatiOptions, RiccatiSolution, SupportSet, SystemParams};
use crate::error::{Error, Result};

/// Updates between exact log-determinant recomputations.
pub const RECONCILE_EVERY: usize = 1_000;
/// Allowed disagreement between the incremental and exact log-determinant.
pub const MAX_LOG_DET_DRIFT: f64 = 1e-6;
/// Condition number above which the covariance is considered singular.
pub const MAX_CONDITION: f64 = 1e12;
const JITTER: f64 = 1e-12;
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    theta_hat: DMatrix<f64>,
    sigma: DMatrix<f64>,
    log_det_sigma: f64,
    t: usize,
    since_reconcile: usize,
}

impl PosteriorState {
    /// State at time 1 with the given mean (`d x n`) and covariance (`d x d`).
    pub fn new(theta_hat: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() || sigma.nrows() != theta_hat.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mean is {}x{}, covariance is {}x{}",
                theta_hat.nrows(),
                theta_hat.ncols(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if theta_hat.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior"));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 * (1.0 + sigma.amax()) {
            return Err(Error::NotPositiveDefinite("covariance"));
        }
        let log_det_sigma = log_det(&sigma)?;
        Ok(PosteriorState {
            theta_hat,
            sigma,
            log_det_sigma,
            t: 1,
            since_reconcile: 0,
        })
    }

    pub fn theta_hat(&self) -> &DMatrix<f64> {
        &self.theta_hat
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Cached `log det(sigma)`, maintained incrementally.
    pub fn log_det(&self) -> f64 {
        self.log_det_sigma
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn n(&self) -> usize {
        self.theta_hat.ncols()
    }

    /// Exact log-determinant from a fresh Cholesky factorization.
    pub fn log_det_exact(&self) -> Result<f64> {
        log_det(&self.sigma)
    }

    /// Rank-one update with regressor `z = [x; u]` and next state `x_next`.
    pub fn update(&mut self, z: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        if z.len() != self.d() || x_next.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "z has {} entries (expected {}), x_next has {} (expected {})",
                z.len(),
                self.d(),
                x_next.len(),
                self.n()
            )));
        }
        if z.iter().chain(x_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let sz = &self.sigma * z;
        let quad = z.dot(&sz);
        let denom = 1.0 + quad;
        // innovation for every column at once: x_next - theta_hat^T z
        let innovation = x_next - self.theta_hat.tr_mul(z);
        self.theta_hat.ger(1.0 / denom, &sz, &innovation, 1.0);
        self.sigma.ger(-1.0 / denom, &sz, &sz, 1.0);
        control::symmetrize(&mut self.sigma);
        self.log_det_sigma -= quad.ln_1p();
        self.t += 1;
        self.since_reconcile += 1;
        if self.since_reconcile >= RECONCILE_EVERY {
            self.reconcile()?;
        }
        Ok(())
    }

    fn reconcile(&mut self) -> Result<()> {
        let exact = self.log_det_exact()?;
        let drift = (exact - self.log_det_sigma).abs();
        if drift > MAX_LOG_DET_DRIFT {
            return Err(Error::Internal(format!(
                "log det drift {drift:e} at t = {} (cached {}, exact {exact})",
                self.t, self.log_det_sigma
            )));
        }
        self.log_det_sigma = exact;
        self.since_reconcile = 0;
        Ok(())
    }

    /// The same distribution relabelled to time `t`.
    pub(crate) fn at_time(mut self, t: usize) -> Self {
        self.t = t;
        self.since_reconcile = 0;
        self
    }
}

/// Functional form of [`PosteriorState::update`].
pub fn posterior_update(
    state: &PosteriorState,
    z: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<PosteriorState> {
    let mut next = state.clone();
    next.update(z, x_next)?;
    Ok(next)
}

fn cholesky(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = sigma.clone().cholesky() {
        return Ok(chol);
    }
    let mut jittered = sigma.clone();
    control::symmetrize(&mut jittered);
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += JITTER;
    }
    jittered
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("Cholesky factorization failed".into()))
}

fn log_det(sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(sigma)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `sigma^{-1}`, refusing covariances with condition number above `1e12`.
pub fn information_matrix(state: &PosteriorState) -> Result<DMatrix<f64>> {
    let eig = state.sigma.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo.is_nan() || lo <= 0.0 || hi / lo > MAX_CONDITION {
        return Err(Error::SingularCovariance(format!(
            "eigenvalues in [{lo:e}, {hi:e}]"
        )));
    }
    let mut inv = cholesky(&state.sigma)?.inverse();
    control::symmetrize(&mut inv);
    Ok(inv)
}

/// Prior over the parameter: Gaussian columns restricted to `omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub theta_hat: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub omega: SupportSet,
}

impl PriorSpec {
    pub fn new(theta_hat: DMatrix<f64>, sigma: DMatrix<f64>, omega: SupportSet) -> Result<Self> {
        omega.validate()?;
        let spec = PriorSpec {
            theta_hat,
            sigma,
            omega,
        };
        spec.to_posterior()?;
        Ok(spec)
    }

    pub fn to_posterior(&self) -> Result<PosteriorState> {
        PosteriorState::new(self.theta_hat.clone(), self.sigma.clone())
    }
}

/// Posterior after `history` in one shot, from the normal equations:
/// `sigma_T = (sigma_1^{-1} + sum z z^T)^{-1}`,
/// `theta_hat_T = sigma_T (sigma_1^{-1} theta_hat_1 + sum z x_next^T)`.
pub fn batch_posterior(
    prior: &PriorSpec,
    history: &[(DVector<f64>, DVector<f64>)],
) -> Result<PosteriorState> {
    let start = prior.to_posterior()?;
    if history.is_empty() {
        return Ok(start);
    }
    let d = start.d();
    let n = start.n();
    let prior_info = information_matrix(&start)?;
    let mut info = prior_info.clone();
    let mut moment = &prior_info * &prior.theta_hat;
    for (z, x_next) in history {
        if z.len() != d || x_next.len() != n {
            return Err(Error::DimensionMismatch("history entry".into()));
        }
        info.ger(1.0, z, z, 1.0);
        moment.ger(1.0, z, x_next, 1.0);
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("information matrix".into()))?;
    let theta_hat = chol.solve(&moment);
    let mut sigma = chol.inverse();
    control::symmetrize(&mut sigma);
    let log_det_sigma = -2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(PosteriorState {
        theta_hat,
        sigma,
        log_det_sigma,
        t: 1 + history.len(),
        since_reconcile: 0,
    })
}

/// An accepted draw from the restricted Gaussian.
#[derive(Debug, Clone)]
pub struct Sample {
    pub params: SystemParams,
    pub riccati: RiccatiSolution,
    /// Number of proposals drawn, including the accepted one.
    pub attempts: usize,
}

/// Draws `theta` with independent columns `theta(i) ~ N(theta_hat(i), sigma)`
/// and rejects until it lies in `omega` with a solvable Riccati equation.
///
/// The returned sample carries its Riccati solution so callers never solve
/// twice.
pub fn sample_parameter<R: Rng + ?Sized>(
    state: &PosteriorState,
    omega: &SupportSet,
    cost: &CostParams,
    riccati: &RiccatiOptions,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Sample> {
    if max_attempts == 0 {
        return Err(Error::InvalidArgument("max_attempts must be >= 1".into()));
    }
    let chol = cholesky(&state.sigma)?;
    let lower = chol.l();
    let (d, n) = (state.d(), state.n());
    let mut noise = DMatrix::<f64>::zeros(d, n);
    for attempt in 1..=max_attempts {
        noise
            .iter_mut()
            .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
        let theta = &state.theta_hat + &lower * &noise;
        let params = SystemParams::new(theta)?;
        if let Some(sol) = control::admit(omega, &params, cost, riccati) {
            return Ok(Sample {
                params,
                riccati: sol,
                attempts: attempt,
            });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: max_attempts,
    })
}
