mod common;

use std::fs;

use tsde_core::harness::{self, ExperimentConfig, OutputPaths, PolicySpec, Runtime, VariantSpec};
use tsde_core::sim::JumpKind;
use tsde_core::tsde::EpisodeEnd;

use common::*;

fn small(name: &str, runs: usize, horizon: usize) -> ExperimentConfig {
    let mut cfg = harness::preset(name).unwrap();
    cfg.num_runs = runs;
    cfg.horizon = horizon;
    cfg
}

fn runtime() -> Runtime {
    Runtime {
        workers: 1,
        wall_clock_seconds: 0.0,
        finished_unix_seconds: 0,
    }
}

#[test]
fn stationary_runs_replay_exactly() {
    let exp = small("scalar-stable", 5, 3000).resolve().unwrap();
    for i in 0..5 {
        let rec = harness::simulate_run(&exp, i).unwrap();
        let rep = replay_stationary(&rec);
        assert_eq!(rep, ReplayReport { episodes: rec.episode_count(), ..Default::default() });
        assert_eq!(rec.episodes.last().unwrap().end, EpisodeEnd::Horizon);
        let covered: usize = rec.episodes.iter().map(|e| e.length).sum();
        assert_eq!(covered, 3000);
    }
}

#[test]
fn vector_runs_replay_exactly() {
    let exp = small("vector-stable", 2, 1500).resolve().unwrap();
    for i in 0..2 {
        let rec = harness::simulate_run(&exp, i).unwrap();
        let rep = replay_stationary(&rec);
        assert_eq!((rep.growth, rep.determinant, rep.boundary), (0, 0, 0));
        assert!(rec.max_closed_loop_rho().unwrap() <= 0.99 + 1e-9);
    }
}

#[test]
fn tv_reinit_times_follow_the_gap_schedule() {
    let exp = small("tv-scalar-eps0.5", 3, 5000).resolve().unwrap();
    let q = exp.q().unwrap();
    assert_eq!(q, 2.0 * 0.8 / 1.4);
    let expected = expected_reinit_times(q, 5000);
    for i in 0..3 {
        let rec = harness::simulate_run(&exp, i).unwrap();
        assert_eq!(rec.reinit_times, expected);
        assert_eq!(rec.jump_times.len(), 5);
        // The episode after a re-init restarts linear growth from T = 1.
        for w in rec.episodes.windows(2) {
            if w[0].end == EpisodeEnd::Reinit {
                assert_eq!(w[1].t_prev, 1);
                assert_eq!(w[1].start, w[0].start + w[0].length);
            }
        }
    }
}

#[test]
fn jumps_happen_exactly_at_change_points() {
    let mut cfg = small("tv-scalar-eps0.5", 1, 2000);
    cfg.policy = PolicySpec::Oracle;
    let exp = cfg.resolve().unwrap();
    let rec = harness::simulate_run(&exp, 0).unwrap();
    assert_eq!(rec.jump_times.len(), tsde_core::sim::fixed_jump_count(2000, 0.2));
    assert!(rec.jump_times.windows(2).all(|w| w[0] < w[1]));
    assert!(rec.jump_times[0] >= 2);
    // J(theta_t) changes only at change points.
    for t in 2..=2000 {
        let changed = rec.oracle_costs[t - 1] != rec.oracle_costs[t - 2];
        if changed {
            assert!(rec.jump_times.contains(&t), "J changed at {t}");
        }
    }
}

#[test]
fn regret_accumulator_matches_recomputation() {
    let exp = small("scalar-unstable", 3, 20_000).resolve().unwrap();
    for i in 0..3 {
        let rec = harness::simulate_run(&exp, i).unwrap();
        let streamed = rec.final_regret();
        let recomputed = rec.recomputed_regret();
        let scale: f64 = rec.costs.iter().sum();
        assert!((streamed - recomputed).abs() <= 1e-6 * scale);
        let x_max = rec.max_state_norm();
        assert!(rec.state_norms.iter().all(|&v| v <= x_max));
        assert!(x_max.is_finite());
    }
}

#[test]
fn same_seed_same_trajectory() {
    let exp = small("scalar-stable", 2, 2000).resolve().unwrap();
    let a = harness::simulate_run(&exp, 1).unwrap();
    let b = harness::simulate_run(&exp, 1).unwrap();
    assert_eq!(a.costs, b.costs);
    assert_eq!(a.log_det, b.log_det);
    assert_eq!(a.episodes, b.episodes);
    let c = harness::simulate_run(&exp, 0).unwrap();
    assert_ne!(a.costs, c.costs);
}

#[test]
fn emitted_tables_round_trip_exactly() {
    let exp = small("scalar-stable", 4, 2500).resolve().unwrap();
    let out = harness::run_experiment(&exp, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = OutputPaths::new(dir.path());
    harness::emit_results(&out, &paths, &runtime()).unwrap();

    let rows = harness::read_aggregate(&paths.aggregate()).unwrap();
    let agg = &out.aggregate;
    assert_eq!(rows.len(), agg.grid.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.t, agg.grid[i]);
        assert_eq!(r.mean_regret, agg.mean_regret[i]);
        assert_eq!(r.ci95, agg.ci95[i]);
        assert_eq!(r.mean_regret_per_t, agg.mean_regret_per_t[i]);
        assert_eq!(r.mean_xt, agg.mean_max_state[i]);
    }
    let diag = harness::read_diagnostics(&paths.diagnostics()).unwrap();
    assert_eq!(diag.len(), 4);
    for (d, r) in diag.iter().zip(&out.runs) {
        assert_eq!((d.run_index, d.seed, d.k_t, d.x_t, d.final_regret), (r.run_index, r.seed, r.episodes, r.max_state, r.final_regret));
    }
    let text = fs::read_to_string(paths.aggregate()).unwrap();
    assert!(text.starts_with("t,mean_regret,ci95,mean_regret_per_t,mean_Xt\n"));
    assert!(text.ends_with('\n') && !text.contains('\r'));
    let manifest = harness::Manifest::load(&paths.manifest()).unwrap();
    assert_eq!(manifest.config, exp.config);
    assert_eq!(manifest.library.version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn single_run_diagnostics_has_one_row() {
    let exp = small("scalar-stable", 1, 1).resolve().unwrap();
    let out = harness::run_experiment(&exp, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = OutputPaths::new(dir.path().join("nested/out"));
    harness::emit_results(&out, &paths, &runtime()).unwrap();
    let text = fs::read_to_string(paths.diagnostics()).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("run_index,seed,K_T,X_T,final_regret,rejections,reinits\n"));
}

#[test]
fn manifest_records_auto_exponent() {
    let exp = small("tv-scalar-eps0.5", 2, 200).resolve().unwrap();
    let out = harness::run_experiment(&exp, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = OutputPaths::new(dir.path());
    harness::emit_results(&out, &paths, &runtime()).unwrap();
    let manifest = harness::Manifest::load(&paths.manifest()).unwrap();
    assert!((manifest.resolved.q.unwrap() - 8.0 / 7.0).abs() < 1e-15);
    assert_eq!(manifest.resolved.prior_sigma, vec![vec![0.01, 0.0], vec![0.0, 0.01]]);
}

#[test]
fn outputs_are_identical_across_reruns_and_workers() {
    let exp = small("tv-scalar-eps0.8", 6, 1500).resolve().unwrap();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, workers) in dirs.iter().zip([1, 1, 4]) {
        let out = harness::run_experiment(&exp, workers).unwrap();
        let rt = Runtime { workers, ..runtime() };
        harness::emit_results(&out, &OutputPaths::new(dir.path()), &rt).unwrap();
    }
    for file in [harness::AGGREGATE_FILE, harness::DIAGNOSTICS_FILE, harness::MANIFEST_FILE] {
        let first = fs::read(dirs[0].path().join(file)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(first, fs::read(d.path().join(file)).unwrap(), "{file}");
        }
    }
}

#[test]
fn aggregates_match_an_independent_pass() {
    let exp = small("scalar-stable", 7, 3000).resolve().unwrap();
    let out = harness::run_experiment(&exp, 2).unwrap();
    let grid = &out.aggregate.grid;
    let records: Vec<_> = (0..7).map(|i| harness::simulate_run(&exp, i).unwrap()).collect();
    for (g, &t) in grid.iter().enumerate() {
        // Welford's streaming mean and variance.
        let (mut count, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for rec in &records {
            let x = rec.cumulative_regret[t - 1];
            count += 1.0;
            let delta = x - mean;
            mean += delta / count;
            m2 += delta * (x - mean);
        }
        let ci = 1.96 * (m2 / (count - 1.0)).sqrt() / count.sqrt();
        assert!((mean - out.aggregate.mean_regret[g]).abs() <= 1e-10 * mean.abs().max(1.0));
        assert!((ci - out.aggregate.ci95[g]).abs() <= 1e-10 * ci.max(1.0));
    }
    // Subsampling keeps the final-T value.
    let last = *out.aggregate.mean_regret.last().unwrap();
    let direct = records.iter().map(|r| r.final_regret()).sum::<f64>() / 7.0;
    assert!((last - direct).abs() <= 1e-10 * direct.abs().max(1.0));
}

#[test]
fn presets_match_the_published_setup() {
    let get = |n: &str| harness::preset(n).unwrap().resolve().unwrap();
    for (name, a) in [("scalar-stable", 0.9), ("scalar-unstable", 1.5)] {
        let e = get(name);
        let truth = e.true_system.clone().unwrap();
        assert_eq!((truth.a()[(0, 0)], truth.b()[(0, 0)]), (a, 0.5));
        assert_eq!((e.controller.cost.q()[(0, 0)], e.controller.cost.r()[(0, 0)]), (2.0, 1.0));
        assert_eq!(e.controller.prior.theta_hat, nalgebra::DMatrix::from_element(2, 1, 1.0));
        assert_eq!(e.controller.prior.sigma, nalgebra::DMatrix::identity(2, 2));
        assert_eq!((e.num_runs(), e.horizon()), (500, 100_000));
    }
    for (name, lambda) in [("vector-stable", 0.9), ("vector-unstable", 1.5)] {
        let e = get(name);
        let a = e.true_system.clone().unwrap().a();
        let mut eig: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert!((eig[2] - lambda).abs() < 1e-12);
        assert_eq!(e.controller.prior.theta_hat, nalgebra::DMatrix::from_element(6, 3, 1.0));
    }
    for (name, delta) in [("scalar-stable", 0.99), ("scalar-stable-delta2", 2.0), ("vector-unstable-delta2", 2.0)] {
        match &get(name).controller.prior.omega {
            tsde_core::control::SupportSet::SpectralRadiusBall { delta: d, .. } => assert_eq!(*d, delta),
            other => panic!("{other:?}"),
        }
    }
    for (name, eps) in [("tv-scalar-eps0.5", 0.5), ("tv-scalar-eps0.8", 0.8), ("tv-vector-eps0.5", 0.5), ("tv-vector-eps0.8", 0.8)] {
        let e = get(name);
        assert_eq!((e.horizon(), e.num_runs()), (50_000, 200));
        assert_eq!(e.jumps, JumpKind::FixedUniform { alpha: 0.2 });
        assert!(matches!(e.config.variant, VariantSpec::TimeVarying { alpha: Some(a), .. } if a == 0.2));
        let d = e.config.d();
        assert_eq!(e.controller.prior.sigma, nalgebra::DMatrix::identity(d, d) * 0.01);
        match &e.controller.prior.omega {
            tsde_core::control::SupportSet::NormBall { epsilon, center } => {
                assert_eq!(*epsilon, eps);
                assert_eq!(center, &e.controller.prior.theta_hat);
            }
            other => panic!("{other:?}"),
        }
        assert!(e.true_system.is_none());
    }
    let tv = get("tv-scalar-eps0.5");
    assert_eq!(tv.controller.prior.theta_hat, nalgebra::DMatrix::from_column_slice(2, 1, &[1.0, 0.5]));
}

#[test]
fn experiment_fails_when_too_many_runs_fail() {
    let mut cfg = small("scalar-stable", 3, 50);
    cfg.solver.max_sample_attempts = 1;
    // Every draw near this mean has a destabilizing gain, and so does the mean.
    cfg.prior.mean = harness::PriorMeanSpec::Theta { theta: vec![vec![40.0], vec![-40.0]] };
    let err = harness::run_experiment(&cfg.resolve().unwrap(), 1).unwrap_err();
    assert!(matches!(err, tsde_core::Error::ExperimentFailed { failed: 3, total: 3, .. }), "{err}");
}

#[test]
fn config_file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    let cfg = small("tv-vector-eps0.8", 3, 100);
    fs::write(&path, cfg.to_toml_string()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    let missing = ExperimentConfig::load(&dir.path().join("nope.toml")).unwrap_err();
    assert!(missing.to_string().contains("nope.toml"));
}

#[test]
fn max_state_stays_within_the_contraction_scale() {
    // Mean X_T against (1 - delta)^{-1} sqrt(ln T), for shrinking supports.
    let horizon = 20_000;
    let scale = (horizon as f64).ln().sqrt();
    for delta in [0.5, 0.9, 0.99] {
        let mut cfg = small("scalar-stable", 20, horizon);
        cfg.prior.support = harness::SupportSpec::SpectralRadius { delta };
        let out = harness::run_experiment(&cfg.resolve().unwrap(), 2).unwrap();
        let mean = out.aggregate.max_state.mean;
        assert!(mean.is_finite());
        assert!(mean <= 10.0 * scale / (1.0 - delta), "delta {delta}: mean X_T {mean}");
        assert!(out.aggregate.max_closed_loop_rho.unwrap() <= delta + 1e-9);
    }
}
