//! Ground-truth plant, jump process and regret accounting.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, PosteriorState};
use crate::control::{self, CostParams, RiccatiOptions, RiccatiSolution, SupportSet, SystemParams};
use crate::error::{Error, Result};
use crate::tsde::{EpisodeRecord, Event};

/// `x^T Q x + u^T R u`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, cost: &CostParams) -> Result<f64> {
    if x.len() != cost.n() || u.len() != cost.m() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, u has {}; cost is for n={}, m={}",
            x.len(),
            u.len(),
            cost.n(),
            cost.m()
        )));
    }
    Ok(x.dot(&(cost.q() * x)) + u.dot(&(cost.r() * u)))
}

/// Optimal average cost `J(theta) = trace(S(theta))`.
pub fn oracle_cost(theta: &SystemParams, cost: &CostParams, opts: &RiccatiOptions) -> Result<f64> {
    Ok(control::solve_riccati(theta, cost, opts)?.cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpKind {
    None,
    /// `floor(T^alpha)` change points drawn uniformly without replacement.
    FixedUniform { alpha: f64 },
    /// Independent `Bernoulli(p)` indicator at every `t >= 2`.
    Bernoulli { p: f64 },
}

/// Realized jump indicators, stored as the sorted list of change points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSchedule {
    pub kind: JumpKind,
    pub horizon: usize,
    change_points: Vec<usize>,
}

impl JumpSchedule {
    pub fn none(horizon: usize) -> Self {
        JumpSchedule {
            kind: JumpKind::None,
            horizon,
            change_points: Vec::new(),
        }
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    /// `j_t`.
    pub fn is_change_point(&self, t: usize) -> bool {
        self.change_points.binary_search(&t).is_ok()
    }
}

/// `floor(horizon^alpha)`, robust to rounding at exact integer powers.
pub fn fixed_jump_count(horizon: usize, alpha: f64) -> usize {
    let target = alpha * (horizon as f64).ln();
    let mut count = (horizon as f64).powf(alpha).floor() as usize;
    while ((count + 1) as f64).ln() <= target + 1e-12 {
        count += 1;
    }
    while count > 1 && (count as f64).ln() > target + 1e-12 {
        count -= 1;
    }
    count
}

pub fn make_jump_schedule<R: Rng + ?Sized>(
    kind: JumpKind,
    horizon: usize,
    rng: &mut R,
) -> Result<JumpSchedule> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let change_points = match kind {
        JumpKind::None => Vec::new(),
        JumpKind::FixedUniform { alpha } => {
            if !(0.0..1.0).contains(&alpha) {
                return Err(Error::InvalidArgument(format!("alpha must be in [0, 1), got {alpha}")));
            }
            let count = fixed_jump_count(horizon, alpha);
            if count > horizon - 1 {
                return Err(Error::InfeasibleCount { count, horizon });
            }
            let mut points: Vec<usize> = rand::seq::index::sample(rng, horizon - 1, count)
                .into_iter()
                .map(|i| i + 2)
                .collect();
            points.sort_unstable();
            points
        }
        JumpKind::Bernoulli { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("p must be in [0, 1], got {p}")));
            }
            (2..=horizon).filter(|_| rng.random_bool(p)).collect()
        }
    };
    Ok(JumpSchedule {
        kind,
        horizon,
        change_points,
    })
}

/// Where new parameters come from at a change point: the prior restricted to
/// its support, sampled on a stream independent of the plant noise.
#[derive(Debug, Clone)]
pub struct JumpSource {
    pub prior: PosteriorState,
    pub omega: SupportSet,
    pub max_attempts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    Gaussian,
    /// `w_t = 0`; deterministic unit tests only.
    Zero,
}

#[derive(Debug, Clone)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: usize,
    pub theta_true: SystemParams,
    pub schedule: JumpSchedule,
}

/// Linear plant `x_{t+1} = A_t x_t + B_t u_t + w_t` with `x_1 = 0`.
pub struct Plant<R> {
    state: PlantState,
    cost: CostParams,
    riccati: RiccatiOptions,
    oracle: RiccatiSolution,
    noise: NoiseMode,
    noise_rng: R,
    jumps: Option<(JumpSource, R)>,
    jump_times: Vec<usize>,
}

impl<R: Rng> Plant<R> {
    pub fn new(
        theta_true: SystemParams,
        cost: CostParams,
        riccati: RiccatiOptions,
        noise: NoiseMode,
        noise_rng: R,
    ) -> Result<Self> {
        let oracle = control::solve_riccati(&theta_true, &cost, &riccati)?;
        let n = theta_true.n();
        Ok(Plant {
            state: PlantState {
                x: DVector::zeros(n),
                t: 1,
                theta_true,
                schedule: JumpSchedule::none(usize::MAX),
            },
            cost,
            riccati,
            oracle,
            noise,
            noise_rng,
            jumps: None,
            jump_times: Vec::new(),
        })
    }

    pub fn with_jumps(mut self, schedule: JumpSchedule, source: JumpSource, jump_rng: R) -> Self {
        self.state.schedule = schedule;
        self.jumps = Some((source, jump_rng));
        self
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.state.x
    }

    pub fn t(&self) -> usize {
        self.state.t
    }

    pub fn theta_true(&self) -> &SystemParams {
        &self.state.theta_true
    }

    pub fn cost(&self) -> &CostParams {
        &self.cost
    }

    /// `J(theta_t)` for the current true parameter; solved once per jump.
    pub fn oracle_cost(&self) -> f64 {
        self.oracle.cost
    }

    pub fn oracle_gain(&self) -> &nalgebra::DMatrix<f64> {
        &self.oracle.gain
    }

    /// Times `t` at which `j_t = 1` was realized so far.
    pub fn jump_times(&self) -> &[usize] {
        &self.jump_times
    }

    /// Applies `u` at the current time and advances to `t + 1`, switching
    /// the true parameter if `t + 1` is a change point.
    pub fn step(&mut self, u: &DVector<f64>) -> Result<()> {
        let theta = &self.state.theta_true;
        if u.len() != theta.m() {
            return Err(Error::DimensionMismatch(format!(
                "control has {} entries, expected {}",
                u.len(),
                theta.m()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        let n = theta.n();
        // theta^T z = A x + B u
        let z = DVector::from_iterator(n + theta.m(), self.state.x.iter().chain(u.iter()).copied());
        let mut next = theta.theta().tr_mul(&z);
        if self.noise == NoiseMode::Gaussian {
            for v in next.iter_mut() {
                *v += self.noise_rng.sample::<f64, _>(StandardNormal);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        self.state.x = next;
        self.state.t += 1;
        let t = self.state.t;
        if self.state.schedule.is_change_point(t) {
            let (source, rng) = self
                .jumps
                .as_mut()
                .ok_or_else(|| Error::Internal("change point without a jump source".into()))?;
            let sample = bayes::sample_parameter(
                &source.prior,
                &source.omega,
                &self.cost,
                &self.riccati,
                rng,
                source.max_attempts,
            )?;
            self.state.theta_true = sample.params;
            self.oracle = sample.riccati;
            self.jump_times.push(t);
        }
        Ok(())
    }
}

/// Per-run accounting of incurred versus oracle cost, plus the diagnostics
/// the regret analysis is phrased in.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegretRecord {
    pub horizon: usize,
    pub seed: u64,
    /// `c_t` for `t = 1..=T`.
    pub costs: Vec<f64>,
    /// `J(theta_t)` for `t = 1..=T`.
    pub oracle_costs: Vec<f64>,
    /// Streamed `sum_{s <= t} (c_s - J(theta_s))`.
    pub cumulative_regret: Vec<f64>,
    /// `|x_t|` for `t = 1..=T`.
    pub state_norms: Vec<f64>,
    /// `log det(sigma_t)` seen by the controller before acting at `t`.
    pub log_det: Vec<f64>,
    pub episodes: Vec<EpisodeRecord>,
    pub reinit_times: Vec<usize>,
    pub jump_times: Vec<usize>,
    pub rejections: u64,
    pub sampling_fallbacks: usize,
    pub events: Vec<Event>,
}

impl RegretRecord {
    pub fn new(horizon: usize, seed: u64) -> Self {
        RegretRecord {
            horizon,
            seed,
            costs: Vec::with_capacity(horizon),
            oracle_costs: Vec::with_capacity(horizon),
            cumulative_regret: Vec::with_capacity(horizon),
            state_norms: Vec::with_capacity(horizon),
            ..Default::default()
        }
    }

    pub(crate) fn push_step(&mut self, cost: f64, oracle: f64, state_norm: f64) {
        let prev = self.cumulative_regret.last().copied().unwrap_or(0.0);
        self.costs.push(cost);
        self.oracle_costs.push(oracle);
        self.cumulative_regret.push(prev + (cost - oracle));
        self.state_norms.push(state_norm);
    }

    pub fn steps(&self) -> usize {
        self.costs.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Regret recomputed from the stored costs, independent of the stream.
    pub fn recomputed_regret(&self) -> f64 {
        let incurred: f64 = self.costs.iter().sum();
        let oracle: f64 = self.oracle_costs.iter().sum();
        incurred - oracle
    }

    /// `X_T = max_t |x_t|`.
    pub fn max_state_norm(&self) -> f64 {
        self.state_norms.iter().copied().fold(0.0, f64::max)
    }

    /// `K_T`, the number of episodes started within the horizon.
    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    /// Largest closed-loop spectral radius over the applied gains, when the
    /// run tracked it.
    pub fn max_closed_loop_rho(&self) -> Option<f64> {
        self.episodes
            .iter()
            .filter(|e| e.length > 0)
            .filter_map(|e| e.closed_loop_rho)
            .reduce(f64::max)
    }
}

/// Applies the optimal gain of the current true parameter every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleController;

impl OracleController {
    pub fn run<R: Rng>(&self, plant: &mut Plant<R>, horizon: usize, seed: u64) -> Result<RegretRecord> {
        let mut record = RegretRecord::new(horizon, seed);
        for _ in 0..horizon {
            let x = plant.x().clone();
            let u = control::apply_gain(plant.oracle_gain(), &x)?;
            let c = stage_cost(&x, &u, plant.cost())?;
            record.push_step(c, plant.oracle_cost(), x.norm());
            plant.step(&u)?;
        }
        record.jump_times = plant.jump_times().to_vec();
        Ok(record)
    }
}
