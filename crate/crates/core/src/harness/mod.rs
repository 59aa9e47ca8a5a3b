//! Seeded Monte Carlo experiments: configuration, parallel runs,
//! aggregation and file output.
//!
//! Every run derives its own seed from `(master_seed, run_index)` and splits
//! it into independent noise, jump and controller streams. Runs are reduced
//! to a [`RunSummary`] as they finish and combined in run order, so results
//! do not depend on the number of workers.

mod aggregate;
mod config;
mod output;
mod presets;

pub use aggregate::{
    fit_regret_slope, regret_per_unit_time, time_grid, AggregateResult, Distribution,
};
pub use config::{
    fixed_orthogonal, matrix_with_spectrum, to_rows, AutoKeyword, CostSpec, ExperimentConfig,
    Exponent, OutputSpec, PolicySpec, PriorConfig, PriorMeanSpec, ResolvedExperiment, Rows,
    SigmaSpec, SolverSpec, SupportSpec, TrueSystemSpec, VariantSpec,
};
pub use output::{
    emit_results, read_aggregate, read_diagnostics, AggregateRow, DiagnosticsRow, Manifest,
    OutputPaths, Runtime, AGGREGATE_FILE, DIAGNOSTICS_FILE, MANIFEST_FILE, RUNTIME_FILE,
};
pub use presets::{preset, presets, Preset, ASSUMPTION_VIOLATING};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes;
use crate::error::{Error, Result};
use crate::sim::{self, JumpKind, JumpSource, NoiseMode, OracleController, Plant, RegretRecord};
use crate::tsde;

pub const SEED_ENV: &str = "TSDE_SEED";
pub const WORKERS_ENV: &str = "TSDE_WORKERS";

/// Named RNG streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise = 1,
    Jumps = 2,
    Controller = 3,
}

/// SplitMix64 finalizer applied to `master_seed + golden * (run_index + 1)`.
pub fn run_seed(master_seed: u64, run_index: usize) -> u64 {
    let mut z = master_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(run_index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Simulates run `run_index` of `exp` to the horizon and returns the full
/// record.
pub fn simulate_run(exp: &ResolvedExperiment, run_index: usize) -> Result<RegretRecord> {
    let seed = run_seed(exp.master_seed(), run_index);
    let horizon = exp.horizon();
    let cfg = &exp.controller;
    let prior = exp.prior_state()?;
    let mut jump_rng = stream_rng(seed, Stream::Jumps);

    let theta_1 = match &exp.true_system {
        Some(theta) => theta.clone(),
        None => {
            bayes::sample_parameter(
                &prior,
                &cfg.prior.omega,
                &cfg.cost,
                &cfg.riccati,
                &mut jump_rng,
                cfg.max_sample_attempts,
            )?
            .params
        }
    };
    let mut plant = Plant::new(
        theta_1,
        cfg.cost.clone(),
        cfg.riccati,
        NoiseMode::Gaussian,
        stream_rng(seed, Stream::Noise),
    )?;
    if exp.jumps != JumpKind::None {
        let schedule = sim::make_jump_schedule(exp.jumps, horizon, &mut jump_rng)?;
        let source = JumpSource {
            prior,
            omega: cfg.prior.omega.clone(),
            max_attempts: cfg.max_sample_attempts,
        };
        plant = plant.with_jumps(schedule, source, jump_rng);
    }

    let mut record = match exp.config.policy {
        PolicySpec::Tsde => {
            let mut rng = stream_rng(seed, Stream::Controller);
            tsde::run_controller(cfg, &mut plant, horizon, &mut rng)?
        }
        PolicySpec::Oracle => OracleController.run(&mut plant, horizon, seed)?,
    };
    record.seed = seed;
    Ok(record)
}

/// Per-run reduction kept for aggregation and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_index: usize,
    pub seed: u64,
    /// Cumulative regret at each grid time.
    pub grid_regret: Vec<f64>,
    /// `max_{s <= t} |x_s|` at each grid time.
    pub grid_max_state: Vec<f64>,
    pub episodes: usize,
    pub max_state: f64,
    pub final_regret: f64,
    pub rejections: u64,
    pub reinits: usize,
    pub fallbacks: usize,
    pub jumps: usize,
    pub max_closed_loop_rho: Option<f64>,
}

impl RunSummary {
    pub fn from_record(run_index: usize, record: &RegretRecord, grid: &[usize]) -> Self {
        let mut running = Vec::with_capacity(record.state_norms.len());
        let mut max = 0.0f64;
        for &norm in &record.state_norms {
            max = max.max(norm);
            running.push(max);
        }
        RunSummary {
            run_index,
            seed: record.seed,
            grid_regret: grid.iter().map(|&t| record.cumulative_regret[t - 1]).collect(),
            grid_max_state: grid.iter().map(|&t| running[t - 1]).collect(),
            episodes: record.episode_count(),
            max_state: max,
            final_regret: record.final_regret(),
            rejections: record.rejections,
            reinits: record.reinit_times.len(),
            fallbacks: record.sampling_fallbacks,
            jumps: record.jump_times.len(),
            max_closed_loop_rho: record.max_closed_loop_rho(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub error: String,
}

/// Everything a finished experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub experiment: ResolvedExperiment,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
    pub aggregate: AggregateResult,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs every Monte Carlo run of `exp` on `workers` threads.
///
/// Failed runs are dropped from the aggregate when they are fewer than 1% of
/// the total; otherwise the experiment fails.
pub fn run_experiment(exp: &ResolvedExperiment, workers: usize) -> Result<ExperimentOutput> {
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be >= 1".into()));
    }
    let grid = time_grid(exp.horizon());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        (0..exp.num_runs())
            .into_par_iter()
            .map(|i| simulate_run(exp, i).map(|rec| RunSummary::from_record(i, &rec, &grid)))
            .collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (run_index, res) in results.into_iter().enumerate() {
        match res {
            Ok(summary) => runs.push(summary),
            Err(e) => failures.push(RunFailure {
                run_index,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() * 100 >= exp.num_runs() && !failures.is_empty() {
        let first = &failures[0];
        return Err(Error::ExperimentFailed {
            failed: failures.len(),
            total: exp.num_runs(),
            first: format!("run {}: {}", first.run_index, first.error),
        });
    }
    let aggregate = AggregateResult::from_runs(&grid, &runs, exp.horizon(), exp.slope_window)?;
    Ok(ExperimentOutput {
        experiment: exp.clone(),
        runs,
        failures,
        aggregate,
    })
}

/// Applies `TSDE_SEED` to the config and returns the worker count from
/// `TSDE_WORKERS`, if set.
pub fn apply_env_overrides(cfg: &mut ExperimentConfig) -> Result<Option<usize>> {
    let mut errs = Vec::new();
    if let Ok(v) = std::env::var(SEED_ENV) {
        match v.trim().parse::<u64>() {
            Ok(seed) => cfg.master_seed = seed,
            Err(_) => errs.push(format!("{SEED_ENV}: expected an unsigned integer, got {v:?}")),
        }
    }
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w >= 1 => Some(w),
            _ => {
                errs.push(format!("{WORKERS_ENV}: expected a positive integer, got {v:?}"));
                None
            }
        },
        Err(_) => None,
    };
    if errs.is_empty() {
        Ok(workers)
    } else {
        Err(Error::ConfigInvalid(errs))
    }
}
