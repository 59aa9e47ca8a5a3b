//! Experiment configuration file (TOML) and its validation.
//!
//! Matrices are written row-major as arrays of rows. Every section except
//! `true_system`, `cost` and `prior` has defaults.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::{self, PosteriorState, PriorSpec};
use crate::control::{CostParams, RiccatiOptions, SupportSet, SystemParams};
use crate::error::{Error, Result};
use crate::sim::JumpKind;
use crate::tsde::{self, ControllerConfig, Variant};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Free-form labels, e.g. `assumption-violating`.
    #[serde(default)]
    pub flags: Vec<String>,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub num_runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub policy: PolicySpec,
    pub true_system: TrueSystemSpec,
    pub cost: CostSpec,
    pub prior: PriorConfig,
    #[serde(default)]
    pub variant: VariantSpec,
    #[serde(default = "no_jumps")]
    pub jumps: JumpKind,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn no_jumps() -> JumpKind {
    JumpKind::None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    #[default]
    Tsde,
    /// Optimal gain of the true parameter; a regret sanity baseline.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrueSystemSpec {
    Explicit { a: Rows, b: Rows },
    /// `A = U diag(eigenvalues) U^T` with the fixed orthogonal `U` of
    /// [`fixed_orthogonal`].
    Eigen { eigenvalues: Vec<f64>, b: Rows },
    /// Draw `theta_1` from the prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub q: Rows,
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub mean: PriorMeanSpec,
    pub sigma: SigmaSpec,
    pub support: SupportSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorMeanSpec {
    /// Every entry of the `d x n` mean equals `value`.
    Fill { value: f64 },
    /// Stacked `d x n` mean given directly.
    Theta { theta: Rows },
    Explicit { a: Rows, b: Rows },
    Eigen { eigenvalues: Vec<f64>, b: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    /// `scale * I_d`.
    Scaled { scale: f64 },
    Matrix { matrix: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupportSpec {
    /// Closed-loop spectral radius of the true system at most `delta`.
    SpectralRadius { delta: f64 },
    /// Frobenius ball of radius `epsilon`; centered on the prior mean unless
    /// `center` is given.
    NormBall {
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Rows>,
    },
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariantSpec {
    #[default]
    Stationary,
    TimeVarying {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default)]
        q: Exponent,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Value(f64),
    Keyword(AutoKeyword),
    #[serde(skip)]
    #[default]
    Unset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    /// `q = 2(1 - alpha) / (1 + 2 alpha)`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub max_sample_attempts: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let r = RiccatiOptions::default();
        SolverSpec {
            riccati_tol: r.tol,
            riccati_max_iter: r.max_iter,
            max_sample_attempts: bayes::DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// `[lo, hi]` for the regret slope fit; defaults to `[T / 100, T]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_window: Option<[usize; 2]>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }

    pub fn d(&self) -> usize {
        self.n + self.m
    }

    /// Validates everything and builds the typed objects a run needs.
    /// All problems found are reported together.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let mut errs = Vec::new();
        let (n, m, d) = (self.n, self.m, self.d());
        if n == 0 {
            errs.push("n: must be >= 1".to_string());
        }
        if m == 0 {
            errs.push("m: must be >= 1".to_string());
        }
        if self.horizon == 0 {
            errs.push("horizon: must be >= 1".to_string());
        }
        if self.num_runs == 0 {
            errs.push("num_runs: must be >= 1".to_string());
        }
        if !errs.is_empty() {
            return Err(Error::ConfigInvalid(errs));
        }

        let cost = matrix(&self.cost.q, n, n, "cost.q", &mut errs)
            .zip(matrix(&self.cost.r, m, m, "cost.r", &mut errs))
            .and_then(|(q, r)| note(CostParams::new(q, r), "cost", &mut errs));

        let true_system = match &self.true_system {
            TrueSystemSpec::Explicit { a, b } => {
                system_from_ab(a, b, n, m, "true_system", &mut errs).map(Some)
            }
            TrueSystemSpec::Eigen { eigenvalues, b } => {
                system_from_eigen(eigenvalues, b, n, m, "true_system", &mut errs).map(Some)
            }
            TrueSystemSpec::Prior => Some(None),
        };

        let mean = match &self.prior.mean {
            PriorMeanSpec::Fill { value } => Some(DMatrix::from_element(d, n, *value)),
            PriorMeanSpec::Theta { theta } => matrix(theta, d, n, "prior.mean.theta", &mut errs),
            PriorMeanSpec::Explicit { a, b } => {
                system_from_ab(a, b, n, m, "prior.mean", &mut errs).map(SystemParams::into_theta)
            }
            PriorMeanSpec::Eigen { eigenvalues, b } => {
                system_from_eigen(eigenvalues, b, n, m, "prior.mean", &mut errs)
                    .map(SystemParams::into_theta)
            }
        };
        let sigma = match &self.prior.sigma {
            SigmaSpec::Scaled { scale } => {
                if *scale > 0.0 && scale.is_finite() {
                    Some(DMatrix::identity(d, d) * *scale)
                } else {
                    errs.push(format!("prior.sigma.scale: must be > 0, got {scale}"));
                    None
                }
            }
            SigmaSpec::Matrix { matrix: rows } => matrix(rows, d, d, "prior.sigma.matrix", &mut errs),
        };

        let omega = match &self.prior.support {
            SupportSpec::SpectralRadius { delta } => match &true_system {
                Some(Some(truth)) => note(
                    SupportSet::spectral_radius_ball(truth.clone(), *delta),
                    "prior.support.delta",
                    &mut errs,
                ),
                Some(None) => {
                    errs.push(
                        "prior.support: spectral_radius needs a fixed true system, not one drawn from the prior"
                            .to_string(),
                    );
                    None
                }
                None => None,
            },
            SupportSpec::NormBall { epsilon, center } => {
                let c = match center {
                    Some(rows) => matrix(rows, d, n, "prior.support.center", &mut errs),
                    None => mean.clone(),
                };
                c.and_then(|c| note(SupportSet::norm_ball(c, *epsilon), "prior.support.epsilon", &mut errs))
            }
            SupportSpec::All => Some(SupportSet::All),
        };

        let variant = match &self.variant {
            VariantSpec::Stationary => Some(Variant::Stationary),
            VariantSpec::TimeVarying { alpha, q } => {
                if let Some(a) = alpha {
                    if !(0.0..1.0).contains(a) {
                        errs.push(format!("variant.alpha: must be in [0, 1), got {a}"));
                    }
                }
                let resolved = match (q, alpha) {
                    (Exponent::Value(v), _) => Some(*v),
                    (Exponent::Keyword(AutoKeyword::Auto) | Exponent::Unset, Some(a)) => {
                        Some(tsde::reinit_exponent(*a))
                    }
                    (_, None) => {
                        errs.push("variant.q: \"auto\" requires variant.alpha".to_string());
                        None
                    }
                };
                match resolved {
                    Some(q) if q > 0.0 && q.is_finite() => Some(Variant::TimeVarying { q }),
                    Some(q) => {
                        errs.push(format!("variant.q: must be > 0, got {q}"));
                        None
                    }
                    None => None,
                }
            }
        };

        match self.jumps {
            JumpKind::FixedUniform { alpha } if !(0.0..1.0).contains(&alpha) => {
                errs.push(format!("jumps.alpha: must be in [0, 1), got {alpha}"));
            }
            JumpKind::FixedUniform { alpha } => {
                let count = crate::sim::fixed_jump_count(self.horizon, alpha);
                if count > self.horizon - 1 {
                    errs.push(format!(
                        "jumps: {count} change points do not fit in horizon {}",
                        self.horizon
                    ));
                }
            }
            JumpKind::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                errs.push(format!("jumps.p: must be in [0, 1], got {p}"));
            }
            _ => {}
        }
        if self.jumps != JumpKind::None && matches!(self.prior.support, SupportSpec::SpectralRadius { .. }) {
            errs.push("jumps: a spectral_radius support is tied to one true system and cannot be combined with jumps".to_string());
        }

        let s = &self.solver;
        if s.riccati_tol.is_nan() || s.riccati_tol <= 0.0 {
            errs.push(format!("solver.riccati_tol: must be > 0, got {}", s.riccati_tol));
        }
        if s.riccati_max_iter == 0 {
            errs.push("solver.riccati_max_iter: must be >= 1".to_string());
        }
        if s.max_sample_attempts == 0 {
            errs.push("solver.max_sample_attempts: must be >= 1".to_string());
        }

        let slope_window = match self.output.slope_window {
            Some([lo, hi]) => {
                if lo == 0 || lo >= hi || hi > self.horizon {
                    errs.push(format!(
                        "output.slope_window: need 1 <= lo < hi <= horizon, got [{lo}, {hi}]"
                    ));
                }
                (lo, hi)
            }
            None => ((self.horizon / 100).max(1), self.horizon),
        };

        let prior = match (mean, sigma, omega) {
            (Some(mean), Some(sigma), Some(omega)) => {
                note(PriorSpec::new(mean, sigma, omega), "prior", &mut errs)
            }
            _ => None,
        };

        match (errs.is_empty(), cost, true_system, prior, variant) {
            (true, Some(cost), Some(true_system), Some(prior), Some(variant)) => {
                let mut controller = note(
                    ControllerConfig::new(prior, cost, variant),
                    "prior",
                    &mut errs,
                )
                .ok_or_else(|| Error::ConfigInvalid(errs.clone()))?;
                controller.max_sample_attempts = s.max_sample_attempts;
                controller.riccati = RiccatiOptions {
                    tol: s.riccati_tol,
                    max_iter: s.riccati_max_iter,
                };
                if let Some(truth) = &true_system {
                    if let Err(e) = crate::control::solve_riccati(truth, &controller.cost, &controller.riccati) {
                        return Err(Error::ConfigInvalid(vec![format!(
                            "true_system: Riccati equation is not solvable ({e})"
                        )]));
                    }
                }
                Ok(ResolvedExperiment {
                    config: self.clone(),
                    true_system,
                    controller,
                    jumps: self.jumps,
                    slope_window,
                })
            }
            _ => Err(Error::ConfigInvalid(errs)),
        }
    }
}

fn note<T>(res: Result<T>, field: &str, errs: &mut Vec<String>) -> Option<T> {
    match res {
        Ok(v) => Some(v),
        Err(e) => {
            errs.push(format!("{field}: {e}"));
            None
        }
    }
}

fn matrix(rows: &Rows, nrows: usize, ncols: usize, field: &str, errs: &mut Vec<String>) -> Option<DMatrix<f64>> {
    let got_cols = rows.first().map_or(0, Vec::len);
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        errs.push(format!(
            "{field}: expected {nrows}x{ncols}, got {}x{got_cols}",
            rows.len()
        ));
        return None;
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        errs.push(format!("{field}: entries must be finite"));
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(mat: &DMatrix<f64>) -> Rows {
    mat.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn system_from_ab(a: &Rows, b: &Rows, n: usize, m: usize, field: &str, errs: &mut Vec<String>) -> Option<SystemParams> {
    let a = matrix(a, n, n, &format!("{field}.a"), errs);
    let b = matrix(b, n, m, &format!("{field}.b"), errs);
    a.zip(b)
        .and_then(|(a, b)| note(SystemParams::from_ab(&a, &b), field, errs))
}

fn system_from_eigen(
    eigenvalues: &[f64],
    b: &Rows,
    n: usize,
    m: usize,
    field: &str,
    errs: &mut Vec<String>,
) -> Option<SystemParams> {
    if eigenvalues.len() != n {
        errs.push(format!(
            "{field}.eigenvalues: expected {n} values, got {}",
            eigenvalues.len()
        ));
        return None;
    }
    let a = matrix_with_spectrum(eigenvalues);
    let b = matrix(b, n, m, &format!("{field}.b"), errs)?;
    note(SystemParams::from_ab(&a, &b), field, errs)
}

/// Householder reflection `I - 2 v v^T / |v|^2` with `v = (1, 2, ..., n)`.
/// Fixed so that eigenvalue-specified systems are reproducible.
pub fn fixed_orthogonal(n: usize) -> DMatrix<f64> {
    let v = DVector::from_fn(n, |i, _| (i + 1) as f64);
    DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / v.norm_squared())
}

/// `U diag(eigenvalues) U^T` with `U = fixed_orthogonal(n)`.
pub fn matrix_with_spectrum(eigenvalues: &[f64]) -> DMatrix<f64> {
    let u = fixed_orthogonal(eigenvalues.len());
    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
    let mut a = &u * diag * u.transpose();
    crate::control::symmetrize(&mut a);
    a
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    /// `None` when `theta_1` is drawn from the prior in every run.
    pub true_system: Option<SystemParams>,
    pub controller: ControllerConfig,
    pub jumps: JumpKind,
    pub slope_window: (usize, usize),
}

impl ResolvedExperiment {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn num_runs(&self) -> usize {
        self.config.num_runs
    }

    pub fn master_seed(&self) -> u64 {
        self.config.master_seed
    }

    pub fn prior_state(&self) -> Result<PosteriorState> {
        self.controller.prior.to_posterior()
    }

    /// Resolved re-initialization exponent, if time-varying.
    pub fn q(&self) -> Option<f64> {
        match self.controller.variant {
            Variant::TimeVarying { q } => Some(q),
            Variant::Stationary => None,
        }
    }
}
