//! Linear-quadratic control primitives.
//!
//! The system parameter is stored stacked as `theta` (shape `d x n`, with
//! `d = n + m`) so that `theta^T = [A, B]`. Column `i` of `theta` holds the
//! coefficients that produce state component `i` from the regressor
//! `z = [x; u]`, which is the layout the posterior recursions work in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stacked system parameter `theta = [A^T; B^T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    theta: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl SystemParams {
    /// Wraps a `d x n` stacked matrix. `m` is inferred as `d - n`.
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        let n = theta.ncols();
        let d = theta.nrows();
        if n == 0 || d < n {
            return Err(Error::DimensionMismatch(format!(
                "theta must be d x n with d >= n >= 1, got {d} x {n}"
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        Ok(SystemParams { theta, n, m: d - n })
    }

    pub fn from_ab(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        let mut theta = DMatrix::zeros(n + m, n);
        theta.rows_mut(0, n).copy_from(&a.transpose());
        theta.rows_mut(n, m).copy_from(&b.transpose());
        SystemParams::new(theta)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_theta(self) -> DMatrix<f64> {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.n + self.m
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.theta.rows(0, self.n).transpose()
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.theta.rows(self.n, self.m).transpose()
    }
}

/// Quadratic stage-cost weights; both must be symmetric positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostParams {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_spd(&q, "Q")?;
        check_spd(&r, "R")?;
        Ok(CostParams { q, r })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    fn check_dims(&self, params: &SystemParams) -> Result<()> {
        if self.n() != params.n() || self.m() != params.m() {
            return Err(Error::DimensionMismatch(format!(
                "cost is for n={}, m={} but system has n={}, m={}",
                self.n(),
                self.m(),
                params.n(),
                params.m()
            )));
        }
        Ok(())
    }
}

fn check_spd(mat: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if !mat.is_square() || mat.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square and non-empty, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    let scale = 1.0 + mat.amax();
    if (mat - mat.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotPositiveDefinite(name));
    }
    let min_eig = mat.clone().symmetric_eigenvalues().min();
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite(name));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// Stabilizing solution of the discrete algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// Optimal average cost per stage, `trace(S)`.
    pub cost: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Value iterates whose entries exceed this are treated as diverging.
const DIVERGENCE_BOUND: f64 = 1e12;

/// `G = -(R + B^T S B)^{-1} B^T S A`.
pub fn gain_from_value(
    params: &SystemParams,
    cost: &CostParams,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    cost.check_dims(params)?;
    if s.nrows() != params.n() || s.ncols() != params.n() {
        return Err(Error::DimensionMismatch(format!(
            "S is {}x{}, expected {n}x{n}",
            s.nrows(),
            s.ncols(),
            n = params.n()
        )));
    }
    Ok(gain_unchecked(&params.a(), &params.b(), cost.r(), s))
}

fn gain_unchecked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> DMatrix<f64> {
    let bt_s = b.transpose() * s;
    let lhs = r + &bt_s * b;
    let rhs = &bt_s * a;
    let solved = match lhs.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        // R + B^T S B is SPD for S >= 0; LU only covers rounding trouble.
        None => lhs
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DMatrix::from_element(rhs.nrows(), rhs.ncols(), f64::NAN)),
    };
    -solved
}

/// One application of the Riccati map, symmetrized. Returns the new iterate
/// and the gain computed from the old one.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> DMatrix<f64> {
    let gain = gain_unchecked(a, b, r, s);
    let at_s = a.transpose() * s;
    // -A^T S B (R + B^T S B)^{-1} B^T S A == A^T S B G
    let mut next = q + &at_s * a + (&at_s * b) * gain;
    symmetrize(&mut next);
    next
}

pub(crate) fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

/// Solves the Riccati equation by value iteration from `S0 = Q`.
///
/// Converged when both the step change and the residual of the returned
/// `S` are at most `opts.tol` (max-abs elementwise). Non-stabilizable
/// parameters show up as `NoConvergence`, which callers treat as an ordinary
/// rejection.
pub fn solve_riccati(
    params: &SystemParams,
    cost: &CostParams,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    cost.check_dims(params)?;
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "Riccati tolerance must be > 0 and max_iter >= 1, got {} and {}",
            opts.tol, opts.max_iter
        )));
    }
    let a = params.a();
    let b = params.b();
    let (q, r) = (cost.q(), cost.r());

    let mut s = q.clone();
    let mut change = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let next = riccati_map(&a, &b, q, r, &s);
        change = (&next - &s).amax();
        s = next;
        if !change.is_finite() || s.amax() > DIVERGENCE_BOUND {
            return Err(Error::NoConvergence {
                iterations: iteration,
                residual: f64::INFINITY,
            });
        }
        if change <= opts.tol {
            let residual = (riccati_map(&a, &b, q, r, &s) - &s).amax();
            if residual <= opts.tol {
                let gain = gain_unchecked(&a, &b, r, &s);
                let cost = s.trace();
                return Ok(RiccatiSolution {
                    s,
                    gain,
                    cost,
                    iterations: iteration,
                    residual,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: change,
    })
}

/// Max-abs elementwise residual of the Riccati equation at `s`.
pub fn riccati_residual(params: &SystemParams, cost: &CostParams, s: &DMatrix<f64>) -> Result<f64> {
    cost.check_dims(params)?;
    let next = riccati_map(&params.a(), &params.b(), cost.q(), cost.r(), s);
    Ok((next - s).amax())
}

/// Largest eigenvalue magnitude of a square matrix.
///
/// Eigenvalues come from a real Schur decomposition iterated to machine
/// precision; `tol` is the accuracy the caller requires and must be positive.
pub fn spectral_radius(mat: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if !mat.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            mat.nrows(),
            mat.ncols()
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    match mat.nrows() {
        0 => Ok(0.0),
        1 => Ok(mat[(0, 0)].abs()),
        _ => Ok(mat
            .complex_eigenvalues()
            .iter()
            .map(|ev| ev.norm())
            .fold(0.0, f64::max)),
    }
}

/// `A + B G` for the given (true) system.
pub fn closed_loop(true_params: &SystemParams, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gain.nrows() != true_params.m() || gain.ncols() != true_params.n() {
        return Err(Error::DimensionMismatch(format!(
            "gain is {}x{}, expected {}x{}",
            gain.nrows(),
            gain.ncols(),
            true_params.m(),
            true_params.n()
        )));
    }
    Ok(true_params.a() + true_params.b() * gain)
}

pub const SPECTRAL_TOL: f64 = 1e-9;

/// Region the prior is restricted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SupportSet {
    /// Parameters whose optimal gain keeps the *true* closed loop within
    /// spectral radius `delta`. Only usable in simulation, since it needs the
    /// true system.
    SpectralRadiusBall {
        true_params: SystemParams,
        delta: f64,
    },
    /// Open Frobenius ball around `center`.
    NormBall { center: DMatrix<f64>, epsilon: f64 },
    All,
}

impl SupportSet {
    pub fn spectral_radius_ball(true_params: SystemParams, delta: f64) -> Result<Self> {
        if delta.is_nan() || delta <= 0.0 || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("delta must be > 0, got {delta}")));
        }
        Ok(SupportSet::SpectralRadiusBall { true_params, delta })
    }

    pub fn norm_ball(center: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(SupportSet::NormBall { center, epsilon })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SupportSet::SpectralRadiusBall { delta, .. } if delta.is_nan() || *delta <= 0.0 => Err(
                Error::InvalidArgument(format!("delta must be > 0, got {delta}")),
            ),
            SupportSet::NormBall { epsilon, .. } if epsilon.is_nan() || *epsilon <= 0.0 => Err(
                Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Membership test for the support set. Solver failures count as
/// non-membership.
pub fn support_contains(
    omega: &SupportSet,
    theta: &SystemParams,
    cost: &CostParams,
    opts: &RiccatiOptions,
) -> bool {
    match omega {
        SupportSet::SpectralRadiusBall { true_params, delta } => {
            match solve_riccati(theta, cost, opts) {
                Ok(sol) => closed_loop_within(true_params, &sol.gain, *delta),
                Err(_) => false,
            }
        }
        SupportSet::NormBall { center, epsilon } => in_norm_ball(center, *epsilon, theta),
        SupportSet::All => true,
    }
}

fn in_norm_ball(center: &DMatrix<f64>, epsilon: f64, theta: &SystemParams) -> bool {
    center.shape() == theta.theta().shape() && (theta.theta() - center).norm() < epsilon
}

fn closed_loop_within(true_params: &SystemParams, gain: &DMatrix<f64>, delta: f64) -> bool {
    closed_loop(true_params, gain)
        .and_then(|cl| spectral_radius(&cl, SPECTRAL_TOL))
        .map(|rho| rho <= delta)
        .unwrap_or(false)
}

/// Membership plus a solved Riccati equation: `Some` iff `theta` lies in the
/// support and its Riccati equation is solvable.
pub(crate) fn admit(
    omega: &SupportSet,
    theta: &SystemParams,
    cost: &CostParams,
    opts: &RiccatiOptions,
) -> Option<RiccatiSolution> {
    match omega {
        SupportSet::NormBall { center, epsilon } if !in_norm_ball(center, *epsilon, theta) => {
            return None;
        }
        _ => {}
    }
    let sol = solve_riccati(theta, cost, opts).ok()?;
    match omega {
        SupportSet::SpectralRadiusBall { true_params, delta }
            if !closed_loop_within(true_params, &sol.gain, *delta) =>
        {
            None
        }
        _ => Some(sol),
    }
}

/// `u = G x`.
pub fn apply_gain(gain: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if gain.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "gain has {} columns, state has {} entries",
            gain.ncols(),
            x.len()
        )));
    }
    Ok(gain * x)
}
