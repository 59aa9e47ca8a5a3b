use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tsde_core::harness::{self, ExperimentConfig, OutputPaths, Runtime};

/// Thompson sampling LQ control experiments.
#[derive(Debug, Parser)]
#[command(name = "tsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its result files.
    Run {
        /// Experiment TOML file; optional with --preset.
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start from a built-in configuration (see list-presets).
        #[arg(long)]
        preset: Option<String>,
        /// Output directory [default: output.dir from the config, else results/<name>].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print built-in experiment names.
    ListPresets {
        /// Print the TOML of this preset instead.
        #[arg(long)]
        show: Option<String>,
    },
    /// Fit the log-log slope of mean regret in an aggregate file.
    Slope {
        aggregate: PathBuf,
        /// Window as LO,HI.
        #[arg(long, value_parser = parse_window)]
        window: Option<(usize, usize)>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn parse_window(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = lo.trim().parse().map_err(|e| format!("LO: {e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("HI: {e}"))?;
    Ok((lo, hi))
}

fn load_config(config: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    match (config, preset) {
        (Some(_), Some(_)) => bail!("give either a config file or --preset, not both"),
        (Some(path), None) => Ok(ExperimentConfig::load(path)?),
        (None, Some(name)) => harness::preset(name)
            .with_context(|| format!("unknown preset {name:?}; see `tsde list-presets`")),
        (None, None) => bail!("a config file or --preset is required"),
    }
}

fn run(
    config: Option<PathBuf>,
    preset: Option<String>,
    runs: Option<usize>,
    horizon: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config.as_deref(), preset.as_deref())?;
    let env_workers = harness::apply_env_overrides(&mut cfg)?;
    if let Some(r) = runs {
        cfg.num_runs = r;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
        if cfg.output.slope_window.is_some_and(|[_, hi]| hi > h) {
            cfg.output.slope_window = None;
        }
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let workers = workers.or(env_workers).unwrap_or_else(harness::default_workers);
    let dir = out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
    let exp = cfg.resolve()?;

    eprintln!(
        "running {}: {} runs, T = {}, seed {}, {} workers",
        cfg.name, cfg.num_runs, cfg.horizon, cfg.master_seed, workers
    );
    let started = Instant::now();
    let output = harness::run_experiment(&exp, workers)?;
    let runtime = Runtime {
        workers,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        finished_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let paths = OutputPaths::new(&dir);
    harness::emit_results(&output, &paths, &runtime)?;

    let agg = &output.aggregate;
    println!(
        "final mean regret {:.4} +/- {:.4} over {} runs",
        agg.final_mean_regret(),
        agg.final_ci95(),
        agg.num_runs
    );
    match agg.slope {
        Some(s) => println!("slope on [{}, {}]: {s:.4}", agg.slope_window.0, agg.slope_window.1),
        None => println!("slope on [{}, {}]: undefined", agg.slope_window.0, agg.slope_window.1),
    }
    if !output.failures.is_empty() {
        println!("{} runs failed and were excluded", output.failures.len());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn slope(path: &Path, window: Option<(usize, usize)>) -> Result<()> {
    let rows = harness::read_aggregate(path)?;
    let last = rows.last().with_context(|| format!("{} has no rows", path.display()))?.t;
    let window = window.unwrap_or(((last / 100).max(1), last));
    let grid: Vec<usize> = rows.iter().map(|r| r.t).collect();
    let mean: Vec<f64> = rows.iter().map(|r| r.mean_regret).collect();
    let s = harness::fit_regret_slope(&grid, &mean, window)?;
    println!("{s}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            runs,
            horizon,
            seed,
            preset,
            out,
            workers,
        } => run(config, preset, runs, horizon, seed, out, workers),
        Command::ListPresets { show: None } => {
            for p in harness::presets() {
                let flags = if p.config.flags.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", p.config.flags.join(", "))
                };
                println!("{:<24} {}{flags}", p.name, p.config.description);
            }
            Ok(())
        }
        Command::ListPresets { show: Some(name) } => harness::preset(&name)
            .with_context(|| format!("unknown preset {name:?}"))
            .map(|cfg| print!("{}", cfg.to_toml_string())),
        Command::Slope { aggregate, window } => slope(&aggregate, window),
        Command::Validate { config } => ExperimentConfig::load(&config)
            .and_then(|cfg| cfg.resolve())
            .map(|exp| {
                println!(
                    "{}: ok ({} runs, T = {}{})",
                    exp.config.name,
                    exp.num_runs(),
                    exp.horizon(),
                    exp.q().map_or(String::new(), |q| format!(", q = {q}"))
                );
            })
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
