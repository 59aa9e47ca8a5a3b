//! Cross-run statistics on a fixed time grid.

use serde::{Deserialize, Serialize};

use super::RunSummary;
use crate::error::{Error, Result};

/// Output times: every `t <= 1000`, then 100 log-spaced points per decade,
/// always ending at `horizon`.
pub fn time_grid(horizon: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (1..=horizon.min(1000)).collect();
    if horizon > 1000 {
        let mut i = 1u32;
        loop {
            let t = 10f64.powf(3.0 + f64::from(i) / 100.0).round() as usize;
            if t >= horizon {
                break;
            }
            if t > *grid.last().unwrap() {
                grid.push(t);
            }
            i += 1;
        }
        grid.push(horizon);
    }
    grid
}

/// Least-squares slope of `ln(mean)` against `ln(t)` over grid points with
/// `lo <= t <= hi`.
pub fn fit_regret_slope(grid: &[usize], mean: &[f64], window: (usize, usize)) -> Result<f64> {
    if grid.len() != mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} points, regret has {}",
            grid.len(),
            mean.len()
        )));
    }
    let (lo, hi) = window;
    let mut pts = Vec::new();
    for (&t, &r) in grid.iter().zip(mean) {
        if t < lo || t > hi {
            continue;
        }
        if r.is_nan() || r <= 0.0 {
            return Err(Error::NonPositiveRegret { t, value: r });
        }
        pts.push(((t as f64).ln(), r.ln()));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "window [{lo}, {hi}] holds {} grid points, need 2",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// `mean[i] / grid[i]`.
pub fn regret_per_unit_time(grid: &[usize], mean: &[f64]) -> Vec<f64> {
    grid.iter().zip(mean).map(|(&t, &r)| r / t as f64).collect()
}

/// Order statistics of one per-run quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Distribution {
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub horizon: usize,
    pub num_runs: usize,
    pub grid: Vec<usize>,
    pub mean_regret: Vec<f64>,
    /// `1.96 * sd / sqrt(N)` with the `N - 1` sample deviation; zero for one run.
    pub ci95: Vec<f64>,
    pub mean_regret_per_t: Vec<f64>,
    pub mean_max_state: Vec<f64>,
    pub slope_window: (usize, usize),
    /// `None` when the window holds non-positive mean regret.
    pub slope: Option<f64>,
    pub episodes: Distribution,
    /// `K_T / sqrt(T ln T)`; `None` for `T = 1`.
    pub episode_ratio: Option<Distribution>,
    pub max_state: Distribution,
    pub final_regret: Distribution,
    pub total_rejections: u64,
    pub total_fallbacks: usize,
    pub total_reinits: usize,
    pub max_closed_loop_rho: Option<f64>,
}

impl AggregateResult {
    pub fn from_runs(
        grid: &[usize],
        runs: &[RunSummary],
        horizon: usize,
        slope_window: (usize, usize),
    ) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument("no runs to aggregate".into()));
        }
        let n = runs.len() as f64;
        let mut mean_regret = vec![0.0; grid.len()];
        let mut mean_max_state = vec![0.0; grid.len()];
        for r in runs {
            for (acc, v) in mean_regret.iter_mut().zip(&r.grid_regret) {
                *acc += v;
            }
            for (acc, v) in mean_max_state.iter_mut().zip(&r.grid_max_state) {
                *acc += v;
            }
        }
        mean_regret.iter_mut().for_each(|v| *v /= n);
        mean_max_state.iter_mut().for_each(|v| *v /= n);
        let ci95 = (0..grid.len())
            .map(|g| {
                if runs.len() < 2 {
                    return 0.0;
                }
                let ss: f64 = runs
                    .iter()
                    .map(|r| (r.grid_regret[g] - mean_regret[g]).powi(2))
                    .sum();
                1.96 * (ss / (n - 1.0)).sqrt() / n.sqrt()
            })
            .collect();

        let slope = if slope_window.0 < slope_window.1 {
            fit_regret_slope(grid, &mean_regret, slope_window).ok()
        } else {
            None
        };
        let episodes: Vec<f64> = runs.iter().map(|r| r.episodes as f64).collect();
        let scale = {
            let t = horizon as f64;
            (t * t.ln()).sqrt()
        };
        let ratio: Vec<f64> = episodes.iter().map(|k| k / scale).collect();
        let max_state: Vec<f64> = runs.iter().map(|r| r.max_state).collect();
        let finals: Vec<f64> = runs.iter().map(|r| r.final_regret).collect();
        Ok(AggregateResult {
            horizon,
            num_runs: runs.len(),
            grid: grid.to_vec(),
            mean_regret_per_t: regret_per_unit_time(grid, &mean_regret),
            mean_regret,
            ci95,
            mean_max_state,
            slope_window,
            slope,
            episodes: Distribution::of(&episodes).unwrap(),
            episode_ratio: if horizon > 1 { Distribution::of(&ratio) } else { None },
            max_state: Distribution::of(&max_state).unwrap(),
            final_regret: Distribution::of(&finals).unwrap(),
            total_rejections: runs.iter().map(|r| r.rejections).sum(),
            total_fallbacks: runs.iter().map(|r| r.fallbacks).sum(),
            total_reinits: runs.iter().map(|r| r.reinits).sum(),
            max_closed_loop_rho: runs
                .iter()
                .filter_map(|r| r.max_closed_loop_rho)
                .reduce(f64::max),
        })
    }

    pub fn final_mean_regret(&self) -> f64 {
        *self.mean_regret.last().unwrap()
    }

    pub fn final_ci95(&self) -> f64 {
        *self.ci95.last().unwrap()
    }

    pub fn fit_slope(&self, window: (usize, usize)) -> Result<f64> {
        fit_regret_slope(&self.grid, &self.mean_regret, window)
    }

    pub fn regret_per_unit_time(&self) -> Vec<f64> {
        self.mean_regret_per_t.clone()
    }

    /// Index of grid time `t`, if it is on the grid.
    pub fn index_of(&self, t: usize) -> Option<usize> {
        self.grid.binary_search(&t).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_shape() {
        assert_eq!(time_grid(1), vec![1]);
        assert_eq!(time_grid(5), vec![1, 2, 3, 4, 5]);
        let g = time_grid(100_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g[999], 1000);
        assert_eq!(*g.last().unwrap(), 100_000);
        assert!(g.contains(&10_000));
        assert_eq!(g.len(), 1000 + 199 + 1);
        assert_eq!(*time_grid(1001).last().unwrap(), 1001);
    }

    #[test]
    fn slope_of_power_laws() {
        let grid = time_grid(100_000);
        let sqrt: Vec<f64> = grid.iter().map(|&t| 3.0 * (t as f64).sqrt()).collect();
        assert_abs_diff_eq!(fit_regret_slope(&grid, &sqrt, (1000, 100_000)).unwrap(), 0.5, epsilon = 1e-6);
        let lin: Vec<f64> = grid.iter().map(|&t| 0.2 * t as f64).collect();
        assert_abs_diff_eq!(fit_regret_slope(&grid, &lin, (10, 100)).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_rejects_non_positive_regret() {
        let grid = vec![1, 2, 3];
        let err = fit_regret_slope(&grid, &[1.0, -1.0, 2.0], (1, 3)).unwrap_err();
        assert!(matches!(err, Error::NonPositiveRegret { t: 2, .. }));
        assert!(fit_regret_slope(&grid, &[1.0, 2.0, 3.0], (3, 3)).is_err());
    }

    #[test]
    fn per_unit_time_examples() {
        let grid = vec![1, 4, 100];
        let r: Vec<f64> = grid.iter().map(|&t| (t as f64).sqrt()).collect();
        assert_eq!(regret_per_unit_time(&grid, &r), vec![1.0, 0.5, 0.1]);
        assert_eq!(regret_per_unit_time(&grid, &[2.0, 8.0, 200.0]), vec![2.0; 3]);
    }

    #[test]
    fn distribution_examples() {
        let d = Distribution::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((d.min, d.median, d.mean, d.max), (1.0, 2.5, 4.0, 10.0));
        assert!(Distribution::of(&[]).is_none());
    }
}
