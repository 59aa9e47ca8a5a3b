//! Thompson sampling with dynamic episodes, stationary and time-varying.
//!
//! An episode keeps one sampled parameter and its optimal gain. It ends at
//! the first `t` with `t > t_k + T_{k-1}` or `det(sigma_t) < det(sigma_{t_k}) / 2`.
//! The time-varying variant additionally resets the posterior to the prior
//! whenever `t >= s_l + l^q`.
//!
//! The control loop below follows the two-loop structure of the algorithm
//! literally, including the backdated `t_k <- t - 1` on re-initialization,
//! so that recorded traces can be replayed against the predicates.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, PosteriorState, PriorSpec};
use crate::control::{self, CostParams, RiccatiOptions, RiccatiSolution, SystemParams};
use crate::error::{Error, Result};
use crate::sim::{self, Plant, RegretRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    Stationary,
    /// Re-initialize with gaps `l^q`.
    TimeVarying { q: f64 },
}

/// Re-initialization exponent `q = 2(1 - alpha) / (1 + 2 alpha)` for a jump
/// budget of `T^alpha`.
pub fn reinit_exponent(alpha: f64) -> f64 {
    2.0 * (1.0 - alpha) / (1.0 + 2.0 * alpha)
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub prior: PriorSpec,
    pub cost: CostParams,
    pub variant: Variant,
    pub max_sample_attempts: usize,
    pub riccati: RiccatiOptions,
}

impl ControllerConfig {
    pub fn new(prior: PriorSpec, cost: CostParams, variant: Variant) -> Result<Self> {
        if let Variant::TimeVarying { q } = variant {
            if q.is_nan() || q <= 0.0 || !q.is_finite() {
                return Err(Error::InvalidArgument(format!("q must be > 0, got {q}")));
            }
        }
        if prior.theta_hat.ncols() != cost.n() || prior.theta_hat.nrows() != cost.n() + cost.m() {
            return Err(Error::DimensionMismatch(format!(
                "prior mean is {}x{}, cost implies {}x{}",
                prior.theta_hat.nrows(),
                prior.theta_hat.ncols(),
                cost.n() + cost.m(),
                cost.n()
            )));
        }
        Ok(ControllerConfig {
            prior,
            cost,
            variant,
            max_sample_attempts: bayes::DEFAULT_MAX_ATTEMPTS,
            riccati: RiccatiOptions::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    /// Episode index, from 1.
    pub k: usize,
    /// Start time `t_k`.
    pub t_k: usize,
    /// Previous episode length `T_{k-1}` (`T_0 = 1`).
    pub t_prev: usize,
    pub log_det_at_start: f64,
    pub sampled: SystemParams,
    pub gain: DMatrix<f64>,
    pub riccati: RiccatiSolution,
    /// Proposals drawn for this episode's sample.
    pub attempts: usize,
    /// The sampler was exhausted and an earlier parameter was reused.
    pub fallback: bool,
}

/// Stopping rule on raw quantities; see [`should_end_episode`].
pub fn episode_should_end(
    t: usize,
    t_k: usize,
    t_prev: usize,
    log_det_at_start: f64,
    log_det_now: f64,
) -> bool {
    t > t_k + t_prev || log_det_now < log_det_at_start - LN_2
}

/// True iff `t > t_k + T_{k-1}` or `det(sigma_t) < 0.5 det(sigma_{t_k})`,
/// compared in log space with no slack.
pub fn should_end_episode(t: usize, ep: &EpisodeState, log_det_now: f64) -> bool {
    episode_should_end(t, ep.t_k, ep.t_prev, ep.log_det_at_start, log_det_now)
}

/// Starts episode `k` at time `t`: samples from the current posterior and
/// fixes the gain.
///
/// If the sampler is exhausted the previous episode's parameter is reused;
/// for the first episode the prior mean is used if it lies in the support,
/// otherwise the error is returned.
pub fn begin_episode<R: Rng + ?Sized>(
    prev: Option<&EpisodeState>,
    t: usize,
    posterior: &PosteriorState,
    cfg: &ControllerConfig,
    rng: &mut R,
) -> Result<EpisodeState> {
    // t_k starts at 0, so the first episode gets T_0 = t - 0 = 1.
    let prev_start = prev.map_or(0, |p| p.t_k);
    let t_prev = t.checked_sub(prev_start).filter(|&d| d >= 1).ok_or_else(|| {
        Error::InvalidArgument(format!("episode at t = {t} cannot follow start {prev_start}"))
    })?;
    let k = prev.map_or(1, |p| p.k + 1);
    let drawn = bayes::sample_parameter(
        posterior,
        &cfg.prior.omega,
        &cfg.cost,
        &cfg.riccati,
        rng,
        cfg.max_sample_attempts,
    );
    let (sampled, riccati, attempts, fallback) = match drawn {
        Ok(s) => (s.params, s.riccati, s.attempts, false),
        Err(Error::SamplingExhausted { attempts }) => match prev {
            Some(p) => (p.sampled.clone(), p.riccati.clone(), attempts, true),
            None => {
                let mean = SystemParams::new(cfg.prior.theta_hat.clone())?;
                match control::admit(&cfg.prior.omega, &mean, &cfg.cost, &cfg.riccati) {
                    Some(sol) => (mean, sol, attempts, true),
                    None => return Err(Error::SamplingExhausted { attempts }),
                }
            }
        },
        Err(e) => return Err(e),
    };
    Ok(EpisodeState {
        k,
        t_k: t,
        t_prev,
        log_det_at_start: posterior.log_det(),
        gain: riccati.gain.clone(),
        sampled,
        riccati,
        attempts,
        fallback,
    })
}

/// `u_t = G_k x_t`.
pub fn next_control(x: &DVector<f64>, ep: &EpisodeState) -> Result<DVector<f64>> {
    control::apply_gain(&ep.gain, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinitState {
    /// Re-initialization index, from 1.
    pub l: u64,
    /// Time of the most recent re-initialization (1 before the first).
    pub s_l: usize,
    pub q: f64,
}

impl ReinitState {
    pub fn new(q: f64) -> Self {
        ReinitState { l: 1, s_l: 1, q }
    }

    /// `s_l + l^q`, the earliest time the next reset may happen.
    pub fn next_due(&self) -> f64 {
        self.s_l as f64 + (self.l as f64).powf(self.q)
    }
}

/// True iff `t >= s_l + l^q`, evaluated in floating point.
pub fn should_reinit(t: usize, rs: &ReinitState) -> bool {
    t as f64 >= rs.next_due()
}

/// Resets the posterior to the prior at time `t`. Returns the fresh
/// posterior, the advanced schedule and the backdated episode start `t - 1`.
pub fn reinit(t: usize, rs: &ReinitState, prior: &PosteriorState) -> (PosteriorState, ReinitState, usize) {
    let fresh = prior.clone().at_time(t);
    let next = ReinitState {
        l: rs.l + 1,
        s_l: t,
        q: rs.q,
    };
    (fresh, next, t - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    /// One of the two stopping criteria fired.
    Criterion,
    /// Interrupted by a posterior re-initialization.
    Reinit,
    /// Cut off by the horizon; the episode is partial.
    Horizon,
}

/// Completed-episode summary kept in the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub start: usize,
    pub t_prev: usize,
    pub log_det_at_start: f64,
    /// Number of controls applied in the episode.
    pub length: usize,
    pub end: EpisodeEnd,
    pub rejections: usize,
    pub fallback: bool,
    /// `rho(A + B G_k)` for the true system at the episode start.
    pub closed_loop_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    EpisodeStart { t: usize, k: usize, t_prev: usize },
    Rejections { t: usize, count: usize },
    SamplingFallback { t: usize, k: usize },
    Reinit { t: usize, l: u64 },
    Jump { t: usize },
}

impl Event {
    fn time(&self) -> usize {
        match self {
            Event::EpisodeStart { t, .. }
            | Event::Rejections { t, .. }
            | Event::SamplingFallback { t, .. }
            | Event::Reinit { t, .. }
            | Event::Jump { t } => *t,
        }
    }
}

/// Runs the learning controller against `plant` for `horizon` steps.
///
/// `rng` drives posterior sampling only; the plant owns its noise and jump
/// streams.
pub fn run_controller<RP: Rng, RC: Rng + ?Sized>(
    cfg: &ControllerConfig,
    plant: &mut Plant<RP>,
    horizon: usize,
    rng: &mut RC,
) -> Result<RegretRecord> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let prior = cfg.prior.to_posterior()?;
    let mut posterior = prior.clone();
    let mut reinit_state = match cfg.variant {
        Variant::Stationary => None,
        Variant::TimeVarying { q } => Some(ReinitState::new(q)),
    };
    let mut record = RegretRecord::new(horizon, 0);
    record.log_det.reserve(horizon);
    let mut prev: Option<EpisodeState> = None;
    let mut t = 1;

    while t <= horizon {
        let mut ep = begin_episode(prev.as_ref(), t, &posterior, cfg, rng)?;
        let rejections = if ep.fallback { ep.attempts } else { ep.attempts - 1 };
        record.rejections += rejections as u64;
        record.events.push(Event::EpisodeStart {
            t,
            k: ep.k,
            t_prev: ep.t_prev,
        });
        if rejections > 0 {
            record.events.push(Event::Rejections {
                t,
                count: rejections,
            });
        }
        if ep.fallback {
            record.sampling_fallbacks += 1;
            record.events.push(Event::SamplingFallback { t, k: ep.k });
        }
        let closed_loop_rho = control::closed_loop(plant.theta_true(), &ep.gain)
            .and_then(|cl| control::spectral_radius(&cl, control::SPECTRAL_TOL))
            .ok();
        let start = t;
        let mut length = 0;

        let end = loop {
            if t > horizon {
                break EpisodeEnd::Horizon;
            }
            if should_end_episode(t, &ep, posterior.log_det()) {
                break EpisodeEnd::Criterion;
            }
            if let Some(rs) = reinit_state.as_mut() {
                if should_reinit(t, rs) {
                    let (fresh, next, backdated) = reinit(t, rs, &prior);
                    posterior = fresh;
                    *rs = next;
                    ep.t_k = backdated;
                    record.reinit_times.push(t);
                    record.events.push(Event::Reinit { t, l: next.l });
                    break EpisodeEnd::Reinit;
                }
            }
            let x = plant.x().clone();
            let u = next_control(&x, &ep)?;
            let c = sim::stage_cost(&x, &u, &cfg.cost)?;
            record.push_step(c, plant.oracle_cost(), x.norm());
            record.log_det.push(posterior.log_det());
            plant.step(&u)?;
            let z = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
            posterior.update(&z, plant.x())?;
            t += 1;
            length += 1;
        };

        record.episodes.push(EpisodeRecord {
            k: ep.k,
            start,
            t_prev: ep.t_prev,
            log_det_at_start: ep.log_det_at_start,
            length,
            end,
            rejections,
            fallback: ep.fallback,
            closed_loop_rho,
        });
        prev = Some(ep);
    }

    record.jump_times = plant.jump_times().to_vec();
    record
        .events
        .extend(record.jump_times.iter().map(|&t| Event::Jump { t }));
    record.events.sort_by_key(Event::time);
    Ok(record)
}
