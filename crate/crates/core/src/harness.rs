//! Training loop, greedy evaluation, run logs and result statistics.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{ActorCritic, Algo, Experience, PpoParams, QLearner, ReplayBuffer, RolloutBatch, Transition};
use crate::config::{to_document, ExperimentConfig, RunMeta};
use crate::decoupled::{self, training_reward, Diagnostics};
use crate::envs::{EnvSpec, Environment, Observation, VecEnv};
use crate::error::{Error, Result};
use crate::intrinsic::{IntrinsicInput, IntrinsicReward, ObsNormalizer, RewardNormalizer};

/// RNG stream ids; each run draws from independent streams of one seed.
const STREAM_INIT: u64 = 0;
const STREAM_INTRINSIC: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_UPDATE: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// An action chosen by the acting policy together with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub action: usize,
    pub prob: f64,
    pub probs: Vec<f64>,
}

/// Anything the shared training loop can drive.
pub trait Learner {
    /// Samples an action for one lane. `input` is the (possibly normalized)
    /// acting-network input for `obs`.
    fn act<R: Rng + ?Sized>(&mut self, obs: &Observation, input: &[f64], episode: usize, rng: &mut R) -> Result<Action>;

    /// Value estimate used to bootstrap an unfinished rollout.
    fn bootstrap_value(&self, input: &[f64]) -> Result<f64>;

    /// Learns from one collected rollout block.
    fn learn<R: Rng + ?Sized>(&mut self, batch: RolloutBatch, gamma: f64, rng: &mut R) -> Result<Diagnostics>;

    /// The evaluated policy's greedy action.
    fn greedy_action(&self, obs: &Observation, input: &[f64]) -> Result<usize>;
}

/// A2C or PPO acting and learning with one actor-critic.
#[derive(Clone, Debug)]
pub struct OnPolicyLearner {
    pub ac: ActorCritic,
    pub ppo: Option<PpoParams>,
}

impl Learner for OnPolicyLearner {
    fn act<R: Rng + ?Sized>(&mut self, _obs: &Observation, input: &[f64], _episode: usize, rng: &mut R) -> Result<Action> {
        let dist = self.ac.distribution(input)?;
        let action = dist.sample(rng);
        Ok(Action { action, prob: dist.prob(action), probs: dist.probs().to_vec() })
    }

    fn bootstrap_value(&self, input: &[f64]) -> Result<f64> {
        self.ac.state_value(input)
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: RolloutBatch, gamma: f64, rng: &mut R) -> Result<Diagnostics> {
        match &self.ppo {
            Some(ppo) => self.ac.ppo_update(&batch, gamma, ppo, rng)?,
            None => self.ac.a2c_update(&batch, gamma, None)?,
        };
        Ok(Diagnostics::default())
    }

    fn greedy_action(&self, _obs: &Observation, input: &[f64]) -> Result<usize> {
        self.ac.greedy_action(input)
    }
}

/// Linearly decayed exploration rate for the ε-greedy DQN baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// ε-greedy double DQN on raw observations, one update per rollout block.
#[derive(Clone, Debug)]
pub struct DqnLearner {
    pub q: QLearner,
    pub buffer: ReplayBuffer,
    pub epsilon: EpsilonSchedule,
}

impl Learner for DqnLearner {
    fn act<R: Rng + ?Sized>(&mut self, obs: &Observation, _input: &[f64], episode: usize, rng: &mut R) -> Result<Action> {
        let greedy = self.q.greedy_action(&obs.to_vec())?;
        let n = self.q.online.output_dim();
        let eps = self.epsilon.at(episode);
        let action = if rng.random::<f64>() < eps { rng.random_range(0..n) } else { greedy };
        let probs: Vec<f64> =
            (0..n).map(|a| eps / n as f64 + if a == greedy { 1.0 - eps } else { 0.0 }).collect();
        Ok(Action { action, prob: probs[action], probs })
    }

    fn bootstrap_value(&self, _input: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: RolloutBatch, gamma: f64, rng: &mut R) -> Result<Diagnostics> {
        for t in batch.iter() {
            self.buffer.push(Experience {
                obs: t.obs,
                action: t.action,
                reward: t.reward_train,
                next_obs: t.next_obs,
                done: t.done,
            });
        }
        self.q.dqn_update(&self.buffer, gamma, rng)?;
        Ok(Diagnostics::default())
    }

    fn greedy_action(&self, obs: &Observation, _input: &[f64]) -> Result<usize> {
        self.q.greedy_action(&obs.to_vec())
    }
}

/// One evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub episode: usize,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Mean extrinsic return of training episodes finished since the
    /// previous evaluation.
    pub train_return_mean: f64,
    pub intrinsic_mean: f64,
    pub is_weight_mean: f64,
    pub is_weight_max: f64,
    pub is_weight_clamped: usize,
    pub kl_mean: f64,
    pub wall_s: f64,
}

/// Everything a finished (or aborted) run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub records: Vec<EvalRecord>,
    pub train_returns: Vec<f32>,
}

impl RunLog {
    pub fn max_eval_return(&self) -> f64 {
        self.records.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_eval_return(&self) -> f64 {
        mean(&self.records.iter().map(|r| r.mean).collect::<Vec<_>>())
    }

    /// Mean of the logged KL column over all evaluation windows that have one.
    pub fn mean_logged_kl(&self) -> f64 {
        mean(&self.records.iter().map(|r| r.kl_mean).filter(|k| !k.is_nan()).collect::<Vec<_>>())
    }
}

/// Receives evaluation records as they are produced.
pub trait EvalSink {
    fn record(&mut self, record: &EvalRecord) -> Result<()>;
}

/// Discards records.
pub struct NullSink;

impl EvalSink for NullSink {
    fn record(&mut self, _record: &EvalRecord) -> Result<()> {
        Ok(())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Runs `episodes` greedy episodes on fresh environments and returns their
/// undiscounted extrinsic returns.
pub fn evaluate_greedy(
    mut policy: impl FnMut(&Observation) -> Result<usize>,
    spec: &EnvSpec,
    episodes: usize,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|_| {
            let mut env = spec.build()?;
            let mut obs = env.reset();
            let mut total = 0.0;
            loop {
                let step = env.step(policy(&obs)?)?;
                total += step.reward;
                if step.done {
                    break Ok(total);
                }
                obs = step.observation;
            }
        })
        .collect()
}

/// Window accumulators between two evaluations.
#[derive(Default)]
struct Window {
    train_returns: Vec<f64>,
    intrinsic_sum: f64,
    intrinsic_steps: usize,
    diagnostics: Diagnostics,
}

/// The shared training loop. `build` constructs the learner from the
/// network-initialisation stream.
pub fn train<L: Learner>(
    config: &ExperimentConfig,
    seed: u64,
    sink: &mut dyn EvalSink,
    build: impl FnOnce(&ExperimentConfig, &mut ChaCha8Rng) -> Result<L>,
) -> Result<RunLog> {
    config.validate()?;
    let started = Instant::now();
    let spec = config.env_spec();
    let dim = spec.observation_dim();
    let lanes = config.env.num_envs;

    let mut learner = build(config, &mut stream_rng(seed, STREAM_INIT))?;
    let mut intrinsic = IntrinsicReward::new(
        config.intrinsic.name,
        &config.intrinsic_params(),
        dim,
        spec.num_actions(),
        lanes,
        &mut stream_rng(seed, STREAM_INTRINSIC),
    )?;
    let mut act_rng = stream_rng(seed, STREAM_ACT);
    let mut update_rng = stream_rng(seed, STREAM_UPDATE);

    let mut obs_norm = ObsNormalizer::new(config.normalize_obs, dim);
    let mut rew_norm = RewardNormalizer::new(config.normalize_rewards);
    let mut venv = VecEnv::from_spec(&spec, lanes)?;
    let mut inputs: Vec<Vec<f64>> = venv.observations().iter().map(|o| obs_norm.observe(o.to_vec())).collect();
    let mut episode_returns = vec![0.0; lanes];

    let mut log = RunLog { config: config.clone(), seed, records: Vec::new(), train_returns: Vec::new() };
    let mut window = Window::default();
    let mut episodes_done = 0usize;
    let mut next_eval = 0usize;

    let (lambda, pure) = (config.intrinsic.lambda, config.decoupled.pure_intrinsic);
    loop {
        // Evaluate at every crossed boundary, including episode 0.
        while next_eval <= episodes_done && next_eval <= config.schedule.episodes {
            let record = evaluate_window(&learner, &obs_norm, config, next_eval, &mut window, started)?;
            sink.record(&record)?;
            log.records.push(record);
            next_eval += config.schedule.eval_every;
        }
        if episodes_done >= config.schedule.episodes {
            break;
        }

        let mut steps = Vec::with_capacity(config.algo.n_steps);
        for _ in 0..config.algo.n_steps {
            let observations = venv.observations().to_vec();
            let actions = observations
                .iter()
                .zip(&inputs)
                .map(|(o, x)| learner.act(o, x, episodes_done, &mut act_rng))
                .collect::<Result<Vec<_>>>()?;
            let chosen: Vec<usize> = actions.iter().map(|a| a.action).collect();
            let results = venv.step(&chosen)?;
            let intrinsic_inputs: Vec<IntrinsicInput> = (0..lanes)
                .map(|lane| IntrinsicInput {
                    lane,
                    obs: observations[lane],
                    action: chosen[lane],
                    next_obs: results[lane].next_observation,
                })
                .collect();
            let r_int = intrinsic.rewards_and_update(&intrinsic_inputs)?;

            let mut row = Vec::with_capacity(lanes);
            for (lane, (step, action)) in results.iter().zip(actions).enumerate() {
                window.intrinsic_sum += r_int[lane];
                window.intrinsic_steps += 1;
                let reward_train = rew_norm.observe(training_reward(step.reward, r_int[lane], lambda, pure));
                let next_input = obs_norm.observe(step.observation.to_vec());
                let input = std::mem::replace(&mut inputs[lane], next_input);
                row.push(Transition {
                    obs: observations[lane],
                    input,
                    action: action.action,
                    reward_ext: step.reward,
                    reward_train,
                    next_obs: step.next_observation,
                    done: step.done,
                    behavior_prob: action.prob,
                    behavior_probs: action.probs,
                });
                episode_returns[lane] += step.reward;
                if step.done {
                    episodes_done += 1;
                    window.train_returns.push(episode_returns[lane]);
                    log.train_returns.push(episode_returns[lane] as f32);
                    episode_returns[lane] = 0.0;
                    intrinsic.start_episode(lane);
                }
            }
            steps.push(row);
        }
        let bootstrap = inputs.iter().map(|x| learner.bootstrap_value(x)).collect::<Result<Vec<_>>>()?;
        let batch = RolloutBatch::new(steps, bootstrap)?;
        let diagnostics = learner.learn(batch, config.gamma, &mut update_rng)?;
        window.diagnostics.merge(&diagnostics);
    }
    Ok(log)
}

fn evaluate_window<L: Learner>(
    learner: &L,
    obs_norm: &ObsNormalizer,
    config: &ExperimentConfig,
    episode: usize,
    window: &mut Window,
    started: Instant,
) -> Result<EvalRecord> {
    let returns = evaluate_greedy(
        |obs| learner.greedy_action(obs, &obs_norm.apply(obs.to_vec())),
        &config.env_spec(),
        config.schedule.eval_episodes,
    )?;
    let w = std::mem::take(window);
    let intrinsic_mean =
        if w.intrinsic_steps == 0 { f64::NAN } else { w.intrinsic_sum / w.intrinsic_steps as f64 };
    let record = EvalRecord {
        episode,
        mean: mean(&returns),
        std: std_dev(&returns),
        returns,
        train_return_mean: mean(&w.train_returns),
        intrinsic_mean,
        is_weight_mean: w.diagnostics.mean_rho(),
        is_weight_max: w.diagnostics.rho_max,
        is_weight_clamped: w.diagnostics.clamped,
        kl_mean: w.diagnostics.mean_kl(),
        wall_s: started.elapsed().as_secs_f64(),
    };
    log::debug!(
        "episode {} eval {:.3} train {:.3} rho mean {:.3} max {:.3} clamped {} kl {:.4}",
        record.episode,
        record.mean,
        record.train_return_mean,
        record.is_weight_mean,
        record.is_weight_max,
        record.is_weight_clamped,
        record.kl_mean
    );
    Ok(record)
}

/// Routes to the baseline or the decoupled trainer.
pub fn run_experiment_with_sink(config: &ExperimentConfig, seed: u64, sink: &mut dyn EvalSink) -> Result<RunLog> {
    match config.algo.name {
        Algo::A2c | Algo::Ppo => {
            let ppo = (config.algo.name == Algo::Ppo).then(|| config.ppo_params());
            train(config, seed, sink, |cfg, rng| {
                let spec = cfg.env_spec();
                let ac = ActorCritic::new(spec.observation_dim(), spec.num_actions(), cfg.actor_critic_params(), rng)?;
                Ok(OnPolicyLearner { ac, ppo })
            })
        }
        Algo::Dqn => train(config, seed, sink, |cfg, rng| {
            let spec = cfg.env_spec();
            Ok(DqnLearner {
                q: QLearner::new(spec.observation_dim(), spec.num_actions(), cfg.dqn_params(), rng)?,
                buffer: ReplayBuffer::new(cfg.algo.buffer_capacity),
                epsilon: EpsilonSchedule {
                    start: cfg.algo.epsilon_start,
                    end: cfg.algo.epsilon_end,
                    decay_episodes: cfg.algo.epsilon_decay_episodes,
                },
            })
        }),
        Algo::DeA2c | Algo::DePpo | Algo::DeDqn => decoupled::run_decoupled_training(config, seed, sink),
    }
}

pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    run_experiment_with_sink(config, seed, &mut NullSink)
}

pub const CSV_FIXED_COLUMNS: [&str; 3] = ["episode", "ret_mean", "ret_std"];
pub const CSV_DIAGNOSTIC_COLUMNS: [&str; 5] = ["train_ret_mean", "intrinsic_mean", "is_weight_mean", "kl_mean", "wall_s"];

/// Header for `eval_episodes` returns per row.
pub fn csv_header(eval_episodes: usize) -> Vec<String> {
    CSV_FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=eval_episodes).map(|i| format!("ret_e{i}")))
        .chain(CSV_DIAGNOSTIC_COLUMNS.iter().map(|s| s.to_string()))
        .collect()
}

pub fn csv_row(r: &EvalRecord) -> String {
    let mut fields = vec![r.episode.to_string(), r.mean.to_string(), r.std.to_string()];
    fields.extend(r.returns.iter().map(f64::to_string));
    fields.extend(
        [r.train_return_mean, r.intrinsic_mean, r.is_weight_mean, r.kl_mean, r.wall_s].iter().map(f64::to_string),
    );
    fields.join(",")
}

/// Writes a CSV row per record and flushes, so an aborted run keeps its
/// partial log.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W, eval_episodes: usize) -> std::io::Result<Self> {
        writeln!(out, "{}", csv_header(eval_episodes).join(","))?;
        out.flush()?;
        Ok(CsvSink { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> EvalSink for CsvSink<W> {
    fn record(&mut self, record: &EvalRecord) -> Result<()> {
        let io = |e| Error::io("run.csv", e);
        writeln!(self.out, "{}", csv_row(record)).map_err(io)?;
        self.out.flush().map_err(io)
    }
}

/// `OUTDIR/[prefix/]<task>/<algo>-<intrinsic>/<seed>`.
pub fn run_dir(outdir: &Path, prefix: Option<&str>, config: &ExperimentConfig, seed: u64) -> PathBuf {
    let mut dir = outdir.to_path_buf();
    if let Some(p) = prefix {
        dir.push(p);
    }
    dir.join(config.env_spec().task_name()).join(config.cell_name()).join(seed.to_string())
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Runs one seed and writes `config.snapshot` and `run.csv` into its run
/// directory.
pub fn run_to_dir(config: &ExperimentConfig, seed: u64, outdir: &Path, prefix: Option<&str>) -> Result<RunLog> {
    let dir = run_dir(outdir, prefix, config, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = RunMeta {
        seed,
        version: VERSION.to_string(),
        optimal_return: crate::envs::solve_optimal_return(&config.env_spec())?,
        sweep: prefix.map(str::to_string),
    };
    let snapshot = dir.join("config.snapshot");
    fs::write(&snapshot, to_document(config, Some(&meta))).map_err(|e| Error::io(&snapshot, e))?;
    let csv_path = dir.join("run.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut sink = CsvSink::new(BufWriter::new(file), config.schedule.eval_episodes).map_err(|e| Error::io(&csv_path, e))?;
    run_experiment_with_sink(config, seed, &mut sink)
}

/// Reads the `ret_mean` column (and the others by name) of a run CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRun {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvRun {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_run_csv(path: &Path) -> Result<CsvRun> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: Vec<String> = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?.split(',').map(str::to_string).collect(),
        None => return Err(Error::Parse(format!("{}: empty file", path.display()))),
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), n + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!("{} line {}: expected {} fields", path.display(), n + 2, header.len())));
        }
        rows.push(row);
    }
    Ok(CsvRun { header, rows })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstrap means where each seed's values are resampled with replacement
/// within that seed, then pooled.
pub fn stratified_bootstrap_means(per_seed: &[Vec<f64>], resamples: usize, seed: u64) -> Result<Vec<f64>> {
    if per_seed.is_empty() || per_seed.iter().any(Vec::is_empty) {
        return Err(Error::Usage("bootstrap needs at least one value for every seed".into()));
    }
    let total: usize = per_seed.iter().map(Vec::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..resamples)
        .map(|_| {
            let sum: f64 = per_seed
                .iter()
                .map(|values| (0..values.len()).map(|_| *values.choose(&mut rng).unwrap()).sum::<f64>())
                .sum();
            sum / total as f64
        })
        .collect())
}

pub const DEFAULT_RESAMPLES: usize = 5_000;

/// `(low, high)` bounds of the central `level` interval of the stratified
/// bootstrap distribution of the mean.
pub fn stratified_bootstrap_ci(per_seed: &[Vec<f64>], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&level) || resamples == 0 {
        return Err(Error::Usage("bootstrap needs level in [0, 1) and at least one resample".into()));
    }
    let mut means = stratified_bootstrap_means(per_seed, resamples, seed)?;
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}

/// Min-max normalized values per task and their cross-task average.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub per_task: Vec<Vec<f64>>,
    pub averaged: Vec<f64>,
    /// Tasks whose values were all equal and were mapped to 0.5.
    pub degenerate: Vec<bool>,
}

/// `per_task[t][a]` is the mean return of algorithm `a` in task `t`.
pub fn normalize_returns(per_task: &[Vec<f64>]) -> Result<Normalized> {
    let width = per_task.first().map_or(0, Vec::len);
    if per_task.iter().any(|t| t.len() != width) {
        return Err(Error::Usage("every task needs one value per algorithm".into()));
    }
    let mut degenerate = Vec::with_capacity(per_task.len());
    let normalized: Vec<Vec<f64>> = per_task
        .iter()
        .map(|values| {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let flat = hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater);
            degenerate.push(flat);
            values.iter().map(|v| if flat { 0.5 } else { (v - lo) / (hi - lo) }).collect()
        })
        .collect();
    let averaged = (0..width).map(|a| mean(&normalized.iter().map(|t| t[a]).collect::<Vec<_>>())).collect();
    Ok(Normalized { per_task: normalized, averaged, degenerate })
}

/// Aggregated statistics for one `(task, algo-intrinsic)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub task: String,
    pub cell: String,
    pub seeds: usize,
    pub evaluations: usize,
    /// Mean over seeds of each seed's average evaluation return.
    pub mean: f64,
    /// Population std over seeds of each seed's average evaluation return.
    pub std: f64,
    /// Largest cross-seed mean evaluation return over evaluation points.
    pub max: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub cells: Vec<CellSummary>,
    /// Cross-task normalized mean per `algo-intrinsic` cell.
    pub normalized: Vec<(String, f64)>,
    pub skipped: Vec<PathBuf>,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_runs(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "run.csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Aggregates every `run.csv` under `dir`. The cell of a run is the path of
/// its parent directory minus the seed component; the task is everything
/// above the cell directory.
pub fn aggregate_report(dir: &Path) -> Result<Report> {
    let mut runs = Vec::new();
    find_runs(dir, &mut runs)?;
    let mut cells: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for path in runs {
        let rel = path.strip_prefix(dir).unwrap_or(&path);
        let parts: Vec<String> = rel.iter().map(|p| p.to_string_lossy().into_owned()).collect();
        if parts.len() < 4 {
            log::warn!("skipping {}: not in <task>/<cell>/<seed>/run.csv layout", path.display());
            skipped.push(path);
            continue;
        }
        let cell = parts[parts.len() - 3].clone();
        let task = parts[..parts.len() - 3].join("/");
        match read_run_csv(&path).map(|r| r.column("ret_mean")) {
            Ok(Some(col)) if !col.is_empty() => cells.entry((task, cell)).or_default().push(col),
            Ok(_) => {
                log::warn!("skipping {}: no evaluation rows", path.display());
                skipped.push(path);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(path);
            }
        }
    }

    let mut summaries = Vec::new();
    for ((task, cell), seeds) in &cells {
        let seed_means: Vec<f64> = seeds.iter().map(|s| mean(s)).collect();
        let points = seeds.iter().map(Vec::len).min().unwrap_or(0);
        let curve: Vec<f64> = (0..points).map(|i| mean(&seeds.iter().map(|s| s[i]).collect::<Vec<_>>())).collect();
        let (ci_low, ci_high) = stratified_bootstrap_ci(seeds, DEFAULT_RESAMPLES, 0.95, 0)?;
        summaries.push(CellSummary {
            task: task.clone(),
            cell: cell.clone(),
            seeds: seeds.len(),
            evaluations: points,
            mean: mean(&seed_means),
            std: std_dev(&seed_means),
            max: curve.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ci_low,
            ci_high,
            normalized: f64::NAN,
        });
    }

    // Normalize within each task over the cells present in it.
    let mut tasks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in summaries.iter().enumerate() {
        tasks.entry(s.task.clone()).or_default().push(i);
    }
    for idx in tasks.values() {
        let values = vec![idx.iter().map(|&i| summaries[i].mean).collect::<Vec<_>>()];
        let n = normalize_returns(&values)?;
        if n.degenerate[0] {
            log::warn!("task {} has identical returns in every cell", summaries[idx[0]].task);
        }
        for (k, &i) in idx.iter().enumerate() {
            summaries[i].normalized = n.per_task[0][k];
        }
    }
    let mut by_cell: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &summaries {
        by_cell.entry(s.cell.clone()).or_default().push(s.normalized);
    }
    let normalized = by_cell.into_iter().map(|(c, v)| (c, mean(&v))).collect();
    Ok(Report { cells: summaries, normalized, skipped })
}

/// Writes `summary.csv` and `normalized.csv` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    let mut summary = String::from("task,cell,seeds,evaluations,mean,std,max,ci_low,ci_high,normalized\n");
    for c in &report.cells {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.task, c.cell, c.seeds, c.evaluations, c.mean, c.std, c.max, c.ci_low, c.ci_high, c.normalized
        ));
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    let mut normalized = String::from("cell,normalized_mean\n");
    for (cell, v) in &report.normalized {
        normalized.push_str(&format!("{cell},{v}\n"));
    }
    let path = dir.join("normalized.csv");
    fs::write(&path, normalized).map_err(|e| Error::io(&path, e))
}
