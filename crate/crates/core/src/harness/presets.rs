//! Built-in experiment configurations.

use crate::sim::JumpKind;

use super::config::*;

/// Flag carried by presets whose support does not guarantee a stable
/// closed loop.
pub const ASSUMPTION_VIOLATING: &str = "assumption-violating";

pub const STATIONARY_HORIZON: usize = 100_000;
pub const STATIONARY_RUNS: usize = 500;
pub const TV_HORIZON: usize = 50_000;
pub const TV_RUNS: usize = 200;
pub const TV_ALPHA: f64 = 0.2;

/// Spectrum of the 3x3 stationary systems besides the largest eigenvalue.
pub const VECTOR_TAIL_SPECTRUM: [f64; 2] = [0.5, -0.3];
/// Spectrum of the 3x3 time-varying prior mean.
pub const TV_VECTOR_SPECTRUM: [f64; 3] = [1.0, 0.7, -0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub config: ExperimentConfig,
}

fn rows1(v: f64) -> Rows {
    vec![vec![v]]
}

fn eye(n: usize, scale: f64) -> Rows {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
        .collect()
}

fn base(name: &str, description: String, n: usize) -> ExperimentConfig {
    let (q, r) = if n == 1 { (rows1(2.0), rows1(1.0)) } else { (eye(n, 1.0), eye(n, 1.0)) };
    ExperimentConfig {
        name: name.to_string(),
        description,
        flags: Vec::new(),
        n,
        m: n,
        horizon: STATIONARY_HORIZON,
        num_runs: STATIONARY_RUNS,
        master_seed: 0,
        policy: PolicySpec::Tsde,
        true_system: TrueSystemSpec::Prior,
        cost: CostSpec { q, r },
        prior: PriorConfig {
            mean: PriorMeanSpec::Fill { value: 1.0 },
            sigma: SigmaSpec::Scaled { scale: 1.0 },
            support: SupportSpec::SpectralRadius { delta: 0.99 },
        },
        variant: VariantSpec::Stationary,
        jumps: JumpKind::None,
        solver: SolverSpec::default(),
        output: OutputSpec::default(),
    }
}

fn stationary(name: &str, n: usize, lambda: f64, delta: f64) -> ExperimentConfig {
    let shape = if n == 1 { "scalar" } else { "3x3" };
    let mut cfg = base(
        name,
        format!("Stationary {shape} system, largest eigenvalue {lambda}, support delta = {delta}"),
        n,
    );
    cfg.true_system = if n == 1 {
        TrueSystemSpec::Explicit {
            a: rows1(lambda),
            b: rows1(0.5),
        }
    } else {
        let mut eigenvalues = vec![lambda];
        eigenvalues.extend(VECTOR_TAIL_SPECTRUM);
        TrueSystemSpec::Eigen {
            eigenvalues,
            b: eye(n, 1.0),
        }
    };
    cfg.prior.support = SupportSpec::SpectralRadius { delta };
    if delta >= 1.0 {
        cfg.flags.push(ASSUMPTION_VIOLATING.to_string());
    }
    cfg
}

fn time_varying(name: &str, n: usize, epsilon: f64) -> ExperimentConfig {
    let shape = if n == 1 { "scalar" } else { "3x3" };
    let mut cfg = base(
        name,
        format!("Time-varying {shape} system with floor(T^0.2) jumps, norm-ball support epsilon = {epsilon}"),
        n,
    );
    cfg.horizon = TV_HORIZON;
    cfg.num_runs = TV_RUNS;
    cfg.prior = PriorConfig {
        mean: if n == 1 {
            PriorMeanSpec::Explicit {
                a: rows1(1.0),
                b: rows1(0.5),
            }
        } else {
            PriorMeanSpec::Eigen {
                eigenvalues: TV_VECTOR_SPECTRUM.to_vec(),
                b: eye(n, 1.0),
            }
        },
        sigma: SigmaSpec::Scaled { scale: 0.01 },
        support: SupportSpec::NormBall {
            epsilon,
            center: None,
        },
    };
    cfg.variant = VariantSpec::TimeVarying {
        alpha: Some(TV_ALPHA),
        q: Exponent::Keyword(AutoKeyword::Auto),
    };
    cfg.jumps = JumpKind::FixedUniform { alpha: TV_ALPHA };
    cfg
}

pub fn presets() -> Vec<Preset> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, config: ExperimentConfig| out.push(Preset { name, config });
    push("scalar-stable", stationary("scalar-stable", 1, 0.9, 0.99));
    push("scalar-unstable", stationary("scalar-unstable", 1, 1.5, 0.99));
    push("scalar-stable-delta2", stationary("scalar-stable-delta2", 1, 0.9, 2.0));
    push("scalar-unstable-delta2", stationary("scalar-unstable-delta2", 1, 1.5, 2.0));
    push("vector-stable", stationary("vector-stable", 3, 0.9, 0.99));
    push("vector-unstable", stationary("vector-unstable", 3, 1.5, 0.99));
    push("vector-stable-delta2", stationary("vector-stable-delta2", 3, 0.9, 2.0));
    push("vector-unstable-delta2", stationary("vector-unstable-delta2", 3, 1.5, 2.0));
    let mut oracle = stationary("scalar-stable-oracle", 1, 0.9, 0.99);
    oracle.description = "Known-parameter optimal controller on the stable scalar system".into();
    oracle.policy = PolicySpec::Oracle;
    push("scalar-stable-oracle", oracle);
    push("tv-scalar-eps0.5", time_varying("tv-scalar-eps0.5", 1, 0.5));
    push("tv-scalar-eps0.8", time_varying("tv-scalar-eps0.8", 1, 0.8));
    push("tv-vector-eps0.5", time_varying("tv-vector-eps0.5", 3, 0.5));
    push("tv-vector-eps0.8", time_varying("tv-vector-eps0.8", 3, 0.8));
    out
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    presets().into_iter().find(|p| p.name == name).map(|p| p.config)
}
