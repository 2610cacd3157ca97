//! Run artifacts, evaluation and report aggregation.

mod common;

use std::fs;
use std::path::Path;

use derl::config::{parse_config, ExperimentConfig};
use derl::envs::{DeepSeaEnv, EnvSpec};
use derl::harness::{
    aggregate_report, csv_header, evaluate_greedy, mean, quantile, read_run_csv, run_dir, run_experiment,
    run_to_dir, std_dev, stratified_bootstrap_ci, stratified_bootstrap_means, write_report, CsvSink, EvalRecord,
    EvalSink,
};

/// The column list the plotting tool reads.
const PLOT_COLUMNS: [&str; 16] = [
    "episode",
    "ret_mean",
    "ret_std",
    "ret_e1",
    "ret_e2",
    "ret_e3",
    "ret_e4",
    "ret_e5",
    "ret_e6",
    "ret_e7",
    "ret_e8",
    "train_ret_mean",
    "intrinsic_mean",
    "is_weight_mean",
    "kl_mean",
    "wall_s",
];

fn small(algo: &str, intrinsic: &str) -> ExperimentConfig {
    let overrides: Vec<String> = [
        format!("algo={algo}"),
        format!("intrinsic={intrinsic}"),
        "size=4".into(),
        "episodes=120".into(),
        "eval_every=40".into(),
    ]
    .into();
    parse_config("", &overrides).unwrap()
}

#[test]
fn csv_header_matches_the_plotting_schema() {
    assert_eq!(csv_header(8), PLOT_COLUMNS);
}

#[test]
fn run_directory_holds_snapshot_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small("dea2c", "count");
    let log = run_to_dir(&config, 3, tmp.path(), Some("lambda=1")).unwrap();

    let dir = run_dir(tmp.path(), Some("lambda=1"), &config, 3);
    assert_eq!(dir, tmp.path().join("lambda=1/deepsea-4/dea2c-count/3"));
    let csv = read_run_csv(&dir.join("run.csv")).unwrap();
    assert_eq!(csv.header, PLOT_COLUMNS);
    assert_eq!(csv.rows.len(), log.records.len());
    assert_eq!(csv.column("episode").unwrap(), vec![0.0, 40.0, 80.0, 120.0]);
    assert_eq!(csv.column("ret_mean").unwrap(), log.records.iter().map(|r| r.mean).collect::<Vec<_>>());
    // The decoupled learner fills the diagnostics after its first update.
    assert!(csv.column("is_weight_mean").unwrap()[1..].iter().all(|w| w.is_finite() && *w > 0.0));
    assert!(csv.column("kl_mean").unwrap()[1..].iter().all(|k| k.is_finite() && *k >= 0.0));

    let snapshot = fs::read_to_string(dir.join("config.snapshot")).unwrap();
    assert_eq!(parse_config(&snapshot, &[]).unwrap(), config);
    for key in ["seed = 3", "optimal_return = 0.99", "sweep = \"lambda=1\""] {
        assert!(snapshot.contains(key), "snapshot lacks `{key}`:\n{snapshot}");
    }
}

#[test]
fn baselines_log_nan_decoupled_diagnostics() {
    let log = run_experiment(&small("a2c", "count"), 0).unwrap();
    assert!(log.records.iter().all(|r| r.is_weight_mean.is_nan() && r.kl_mean.is_nan()));
    assert!(log.records[1..].iter().all(|r| r.intrinsic_mean > 0.0));
}

#[test]
fn eval_records_follow_the_schedule() {
    for (algo, intrinsic) in [("a2c", "none"), ("ppo", "rnd"), ("dqn", "hash_count"), ("dedqn", "icm"), ("deppo", "ride")] {
        let config = small(algo, intrinsic);
        let log = run_experiment(&config, 1).unwrap();
        let episodes: Vec<usize> = log.records.iter().map(|r| r.episode).collect();
        assert_eq!(episodes, vec![0, 40, 80, 120], "{algo}-{intrinsic}");
        for r in &log.records {
            assert_eq!(r.returns.len(), config.schedule.eval_episodes);
            assert_eq!(r.mean, mean(&r.returns));
            assert_eq!(r.std, std_dev(&r.returns));
        }
        // Every lane's finished episode is counted.
        assert!(log.train_returns.len() >= config.schedule.episodes, "{algo}-{intrinsic}");
    }
}

#[test]
fn zero_episodes_gives_only_the_initial_evaluation() {
    let mut config = small("dea2c", "count");
    config.schedule.episodes = 0;
    let log = run_experiment(&config, 0).unwrap();
    assert_eq!(log.records.len(), 1);
    assert_eq!(log.records[0].episode, 0);
    assert!(log.train_returns.is_empty());
}

fn csv_without_wall_time(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            fields.pop();
            fields.join(",")
        })
        .collect()
}

#[test]
fn reruns_are_byte_identical_apart_from_wall_time() {
    let config = small("dea2c", "rnd");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_to_dir(&config, 7, a.path(), None).unwrap();
    run_to_dir(&config, 7, b.path(), None).unwrap();
    let file = |root: &Path| run_dir(root, None, &config, 7).join("run.csv");
    assert_eq!(csv_without_wall_time(&file(a.path())), csv_without_wall_time(&file(b.path())));
    let snap = |root: &Path| fs::read(run_dir(root, None, &config, 7).join("config.snapshot")).unwrap();
    assert_eq!(snap(a.path()), snap(b.path()));

    let other = run_experiment(&config, 8).unwrap();
    let first = run_experiment(&config, 7).unwrap();
    assert_ne!(
        other.train_returns, first.train_returns,
        "different seeds should produce different training streams"
    );
}

#[test]
fn greedy_evaluation_examples() {
    let size = 10;
    let spec = EnvSpec::DeepSea { size, map_seed: 0 };
    let env = DeepSeaEnv::new(size, 0).unwrap();
    let row = |o: &derl::envs::Observation| o.index() / size;

    let left = evaluate_greedy(|o| Ok(1 - env.right_action(row(o))), &spec, 8).unwrap();
    assert_eq!(left, vec![0.0; 8]);

    let optimal = evaluate_greedy(|o| Ok(env.right_action(row(o))), &spec, 8).unwrap();
    assert_eq!(optimal.len(), 8);
    for r in &optimal {
        assert!((r - 0.99).abs() < 1e-12, "{r}");
    }
    assert!(std_dev(&optimal) < 1e-12);
}

#[test]
fn evaluation_leaves_the_learner_untouched() {
    let config = small("dea2c", "count");
    let mut rng = common::rng(0);
    let state = derl::decoupled::DecoupledState::new(&config, &mut rng).unwrap();
    let before = format!("{state:?}");
    evaluate_greedy(|o| state.exploit.greedy_action(o), &config.env_spec(), 8).unwrap();
    assert_eq!(format!("{state:?}"), before);
}

/// Exact distribution of the pooled bootstrap mean by enumerating every
/// ordered resample of every stratum.
fn exact_bootstrap_quantile(per_seed: &[Vec<f64>], q: f64) -> f64 {
    let total: usize = per_seed.iter().map(Vec::len).sum();
    // Distribution of each stratum's resample sum.
    let mut pooled: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for values in per_seed {
        let n = values.len();
        let mut sums: Vec<(f64, f64)> = vec![(0.0, 1.0)];
        for _ in 0..n {
            sums = sums.iter().flat_map(|(s, p)| values.iter().map(move |v| (s + v, p / n as f64))).collect();
        }
        pooled = pooled.iter().flat_map(|(s, p)| sums.iter().map(move |(t, r)| (s + t, p * r))).collect();
    }
    let mut dist: Vec<(f64, f64)> = pooled.into_iter().map(|(s, p)| (s / total as f64, p)).collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    for (x, p) in &dist {
        acc += p;
        if acc >= q - 1e-12 {
            return *x;
        }
    }
    dist.last().unwrap().0
}

#[test]
fn bootstrap_matches_exact_enumeration_at_high_resample_counts() {
    let per_seed = vec![vec![0.0, 0.3, 0.7, 1.0], vec![0.1, 0.5, 0.9]];
    let (low, high) = stratified_bootstrap_ci(&per_seed, 50_000, 0.95, 11).unwrap();
    let (exact_low, exact_high) = (exact_bootstrap_quantile(&per_seed, 0.025), exact_bootstrap_quantile(&per_seed, 0.975));
    assert!((low - exact_low).abs() < 0.02, "low {low} vs {exact_low}");
    assert!((high - exact_high).abs() < 0.02, "high {high} vs {exact_high}");

    let mut means = stratified_bootstrap_means(&per_seed, 50_000, 11).unwrap();
    means.sort_by(f64::total_cmp);
    assert!((quantile(&means, 0.5) - exact_bootstrap_quantile(&per_seed, 0.5)).abs() < 0.02);
}

#[test]
fn bootstrap_examples() {
    let ci = stratified_bootstrap_ci(&[vec![0.0, 1.0]], 5_000, 0.95, 0).unwrap();
    assert!(0.0 <= ci.0 && ci.0 <= 0.5 && 0.5 <= ci.1 && ci.1 <= 1.0, "{ci:?}");
    assert_eq!(stratified_bootstrap_ci(&[vec![0.5; 3], vec![0.5]], 100, 0.95, 0).unwrap(), (0.5, 0.5));
    assert!(stratified_bootstrap_ci(&[], 100, 0.95, 0).is_err());
}

fn record(episode: usize, value: f64) -> EvalRecord {
    EvalRecord {
        episode,
        returns: vec![value; 8],
        mean: value,
        std: 0.0,
        train_return_mean: f64::NAN,
        intrinsic_mean: f64::NAN,
        is_weight_mean: f64::NAN,
        is_weight_max: f64::NAN,
        is_weight_clamped: 0,
        kl_mean: f64::NAN,
        wall_s: 0.0,
    }
}

fn write_run(root: &Path, task: &str, cell: &str, seed: u64, curve: &[f64]) {
    let dir = root.join(task).join(cell).join(seed.to_string());
    fs::create_dir_all(&dir).unwrap();
    let mut sink = CsvSink::new(fs::File::create(dir.join("run.csv")).unwrap(), 8).unwrap();
    for (i, v) in curve.iter().enumerate() {
        sink.record(&record(i * 1000, *v)).unwrap();
    }
}

#[test]
fn report_aggregates_seeds_and_normalizes_per_task() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let a = [vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]];
    let b = [vec![0.0, 0.0, 0.2], vec![0.0, 0.1, 0.1]];
    for (seed, curve) in a.iter().enumerate() {
        write_run(root, "deepsea-10", "a2c-count", seed as u64, curve);
        write_run(root, "deepsea-14", "a2c-count", seed as u64, &curve.iter().map(|v| v * 0.5).collect::<Vec<_>>());
    }
    for (seed, curve) in b.iter().enumerate() {
        write_run(root, "deepsea-10", "dea2c-count", seed as u64, curve);
        write_run(root, "deepsea-14", "dea2c-count", seed as u64, curve);
    }
    fs::write(root.join("stray.csv"), "not,a,run\n").unwrap();
    fs::create_dir_all(root.join("deepsea-10/a2c-count/9")).unwrap();
    fs::write(root.join("deepsea-10/a2c-count/9/run.csv"), "episode,ret_mean\n0,oops\n").unwrap();

    let report = aggregate_report(root).unwrap();
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.cells.len(), 4);
    let cell = |task: &str, name: &str| report.cells.iter().find(|c| c.task == task && c.cell == name).unwrap();

    let c = cell("deepsea-10", "a2c-count");
    assert_eq!((c.seeds, c.evaluations), (2, 3));
    let seed_means = [0.5, 2.0 / 3.0];
    assert!((c.mean - mean(&seed_means)).abs() < 1e-12);
    assert!((c.std - std_dev(&seed_means)).abs() < 1e-12);
    assert!(c.ci_low <= c.mean && c.mean <= c.ci_high);
    assert_eq!(c.normalized, 1.0);
    assert_eq!(cell("deepsea-10", "dea2c-count").normalized, 0.0);

    // Max rescan oracle: the largest cross-seed mean at any evaluation point,
    // recomputed from the files on disk.
    for c in &report.cells {
        let curves: Vec<Vec<f64>> = (0..2)
            .map(|s| read_run_csv(&root.join(&c.task).join(&c.cell).join(s.to_string()).join("run.csv")).unwrap().column("ret_mean").unwrap())
            .collect();
        let rescanned = (0..3).map(|i| (curves[0][i] + curves[1][i]) / 2.0).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(c.max, rescanned, "{}/{}", c.task, c.cell);
    }

    let normalized: std::collections::HashMap<_, _> = report.normalized.iter().cloned().collect();
    assert_eq!(normalized["a2c-count"], 1.0);
    assert_eq!(normalized["dea2c-count"], 0.0);

    write_report(&report, root).unwrap();
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("task,cell,seeds,evaluations,mean,std,max,ci_low,ci_high,normalized\n"));
    assert_eq!(fs::read_to_string(root.join("normalized.csv")).unwrap().lines().count(), 3);
}

#[test]
fn report_over_sweep_prefixes_keeps_points_apart() {
    let tmp = tempfile::tempdir().unwrap();
    write_run(tmp.path(), "lambda=1/deepsea-10", "a2c-count", 0, &[0.9, 0.99]);
    write_run(tmp.path(), "lambda=100/deepsea-10", "a2c-count", 0, &[0.0, 0.1]);
    let report = aggregate_report(tmp.path()).unwrap();
    let tasks: Vec<&str> = report.cells.iter().map(|c| c.task.as_str()).collect();
    assert_eq!(tasks, ["lambda=1/deepsea-10", "lambda=100/deepsea-10"]);
}
