//! Result files: `aggregate.csv`, `diagnostics.csv`, `manifest.toml` and
//! `runtime.toml`.
//!
//! The first three depend only on the configuration and master seed.
//! Wall-clock time and the worker count go to `runtime.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::Distribution;
use super::config::{to_rows, ExperimentConfig, Rows};
use super::{ExperimentOutput, RunFailure};
use crate::error::{Error, Result};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RUNTIME_FILE: &str = "runtime.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: usize,
    pub mean_regret: f64,
    pub ci95: f64,
    pub mean_regret_per_t: f64,
    #[serde(rename = "mean_Xt")]
    pub mean_xt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub run_index: usize,
    pub seed: u64,
    #[serde(rename = "K_T")]
    pub k_t: usize,
    #[serde(rename = "X_T")]
    pub x_t: f64,
    pub final_regret: f64,
    pub rejections: u64,
    pub reinits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    pub name: String,
    pub version: String,
}

/// Parameters as actually used, after presets, defaults and derivations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub horizon: usize,
    pub num_runs: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub slope_window: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_a: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_b: Option<Rows>,
    pub prior_mean: Rows,
    pub prior_sigma: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub runs_aggregated: usize,
    pub final_mean_regret: f64,
    pub final_ci95: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    pub total_rejections: u64,
    pub total_fallbacks: usize,
    pub total_reinits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_closed_loop_rho: Option<f64>,
    pub episodes: Distribution,
    /// `K_T / sqrt(T ln T)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_ratio: Option<Distribution>,
    pub max_state: Distribution,
    pub final_regret: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library: Library,
    pub resolved: Resolved,
    pub results: Results,
    pub failures: Vec<RunFailure>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn from_output(out: &ExperimentOutput) -> Self {
        let exp = &out.experiment;
        let agg = &out.aggregate;
        let prior = &exp.controller.prior;
        Manifest {
            library: Library {
                name: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            resolved: Resolved {
                horizon: exp.horizon(),
                num_runs: exp.num_runs(),
                master_seed: exp.master_seed(),
                q: exp.q(),
                slope_window: [exp.slope_window.0, exp.slope_window.1],
                true_a: exp.true_system.as_ref().map(|s| to_rows(&s.a())),
                true_b: exp.true_system.as_ref().map(|s| to_rows(&s.b())),
                prior_mean: to_rows(&prior.theta_hat),
                prior_sigma: to_rows(&prior.sigma),
            },
            results: Results {
                runs_aggregated: agg.num_runs,
                final_mean_regret: agg.final_mean_regret(),
                final_ci95: agg.final_ci95(),
                slope: agg.slope,
                total_rejections: agg.total_rejections,
                total_fallbacks: agg.total_fallbacks,
                total_reinits: agg.total_reinits,
                max_closed_loop_rho: agg.max_closed_loop_rho,
                episodes: agg.episodes,
                episode_ratio: agg.episode_ratio,
                max_state: agg.max_state,
                final_regret: agg.final_regret,
            },
            failures: out.failures.clone(),
            config: exp.config.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// Facts about the invocation rather than the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub finished_unix_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutputPaths { dir: dir.into() }
    }

    pub fn aggregate(&self) -> PathBuf {
        self.dir.join(AGGREGATE_FILE)
    }

    pub fn diagnostics(&self) -> PathBuf {
        self.dir.join(DIAGNOSTICS_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn runtime(&self) -> PathBuf {
        self.dir.join(RUNTIME_FILE)
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Internal(format!("{}: {other:?}", path.display())),
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::parse(path, e))
}

/// Writes all result files into `paths.dir`, creating it if needed.
pub fn emit_results(out: &ExperimentOutput, paths: &OutputPaths, runtime: &Runtime) -> Result<()> {
    fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    let agg = &out.aggregate;
    let rows = (0..agg.grid.len()).map(|i| AggregateRow {
        t: agg.grid[i],
        mean_regret: agg.mean_regret[i],
        ci95: agg.ci95[i],
        mean_regret_per_t: agg.mean_regret_per_t[i],
        mean_xt: agg.mean_max_state[i],
    });
    write_csv(
        &paths.aggregate(),
        rows,
        &["t", "mean_regret", "ci95", "mean_regret_per_t", "mean_Xt"],
    )?;
    let diag = out.runs.iter().map(|r| DiagnosticsRow {
        run_index: r.run_index,
        seed: r.seed,
        k_t: r.episodes,
        x_t: r.max_state,
        final_regret: r.final_regret,
        rejections: r.rejections,
        reinits: r.reinits,
    });
    write_csv(
        &paths.diagnostics(),
        diag,
        &["run_index", "seed", "K_T", "X_T", "final_regret", "rejections", "reinits"],
    )?;
    let manifest = toml::to_string(&Manifest::from_output(out))
        .map_err(|e| Error::Internal(format!("manifest: {e}")))?;
    fs::write(paths.manifest(), manifest).map_err(|e| Error::io(paths.manifest(), e))?;
    let runtime = toml::to_string(runtime).map_err(|e| Error::Internal(format!("runtime: {e}")))?;
    fs::write(paths.runtime(), runtime).map_err(|e| Error::io(paths.runtime(), e))
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    read_csv(path)
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>> {
    read_csv(path)
}
