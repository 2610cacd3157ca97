//! Decoupled exploration and exploitation.
//!
//! An A2C exploration policy `π_β` acts in the environment and learns from
//! extrinsic plus intrinsic reward (or intrinsic reward alone). A separate
//! exploitation learner `π_e` trains off-policy on the same transitions with
//! extrinsic reward only and is the policy that gets evaluated.

use rand::Rng;

use crate::agents::{
    kl_divergence as kl_to_probs, ActorCritic, Experience, PolicyTerm, PpoParams, PpoRow, QLearner, ReplayBuffer,
    RolloutBatch, Sample, Transition, UpdateStats, ValueTerm,
};
use crate::config::ExperimentConfig;
use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::harness::{Action, EvalSink, Learner, RunLog};
use crate::intrinsic::combine;
use crate::nn::{softmax_categorical, Categorical};

/// Smallest behavior probability used as an importance-weight denominator.
pub const BEHAVIOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsWeight {
    pub value: f64,
    /// The behavior probability was below [`BEHAVIOR_FLOOR`].
    pub clamped: bool,
}

/// `ρ = π_e(a|s) / π_β(a|s)` with the denominator floored.
pub fn is_weight(exploit_prob: f64, behavior_prob: f64) -> IsWeight {
    let clamped = behavior_prob < BEHAVIOR_FLOOR;
    IsWeight { value: exploit_prob / behavior_prob.max(BEHAVIOR_FLOOR), clamped }
}

/// Retrace truncation `min(1, ρ)`.
pub fn retrace_clip(rho: f64) -> f64 {
    rho.min(1.0)
}

/// `KL(p ‖ q)` with `q` floored at 1e-8 and `0 · log 0 = 0`.
pub fn kl_divergence(p: &Categorical, q: &Categorical) -> f64 {
    kl_to_probs(p, q.probs())
}

/// Reward the exploration learner is trained on: `r_e + λ r_i`, or `λ r_i`
/// in intrinsic-only mode.
pub fn training_reward(r_ext: f64, r_int: f64, lambda: f64, pure_intrinsic: bool) -> f64 {
    if pure_intrinsic {
        lambda * r_int
    } else {
        combine(r_ext, r_int, lambda)
    }
}

/// Running sums for one evaluation window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub rho_sum: f64,
    pub rho_max: f64,
    pub rho_count: usize,
    pub clamped: usize,
    pub kl_sum: f64,
    pub kl_count: usize,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics { rho_sum: 0.0, rho_max: f64::NAN, rho_count: 0, clamped: 0, kl_sum: 0.0, kl_count: 0 }
    }
}

impl Diagnostics {
    pub fn add_rho(&mut self, w: IsWeight) {
        self.rho_sum += w.value;
        self.rho_max = if self.rho_count == 0 { w.value } else { self.rho_max.max(w.value) };
        self.rho_count += 1;
        self.clamped += usize::from(w.clamped);
    }

    pub fn add_kl(&mut self, kl: f64) {
        self.kl_sum += kl;
        self.kl_count += 1;
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        if other.rho_count > 0 {
            self.rho_max = if self.rho_count == 0 { other.rho_max } else { self.rho_max.max(other.rho_max) };
        }
        self.rho_sum += other.rho_sum;
        self.rho_count += other.rho_count;
        self.clamped += other.clamped;
        self.kl_sum += other.kl_sum;
        self.kl_count += other.kl_count;
    }

    /// NaN when nothing was recorded.
    pub fn mean_rho(&self) -> f64 {
        if self.rho_count == 0 {
            f64::NAN
        } else {
            self.rho_sum / self.rho_count as f64
        }
    }

    pub fn mean_kl(&self) -> f64 {
        if self.kl_count == 0 {
            f64::NAN
        } else {
            self.kl_sum / self.kl_count as f64
        }
    }
}

/// Settings shared by the exploitation updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExploitSettings {
    pub gamma: f64,
    pub retrace: bool,
    pub alpha_e: f64,
}

/// Per-transition quantities of the exploitation objective, computed once at
/// the current parameters.
struct OffPolicyRows {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    advantages: Vec<f64>,
    old_values: Vec<f64>,
    weights: Vec<f64>,
    diagnostics: Diagnostics,
}

fn off_policy_rows(ac: &ActorCritic, staged: &[Transition], settings: &ExploitSettings) -> Result<OffPolicyRows> {
    let mut rows = OffPolicyRows {
        inputs: Vec::with_capacity(staged.len()),
        targets: Vec::with_capacity(staged.len()),
        advantages: Vec::with_capacity(staged.len()),
        old_values: Vec::with_capacity(staged.len()),
        weights: Vec::with_capacity(staged.len()),
        diagnostics: Diagnostics::default(),
    };
    for t in staged {
        let x = t.obs.to_vec();
        let v = ac.state_value(&x)?;
        let next_v = if t.done { 0.0 } else { ac.state_value(&t.next_obs.to_vec())? };
        let target = t.reward_ext + settings.gamma * next_v;
        let dist = ac.distribution(&x)?;
        let w = is_weight(dist.prob(t.action), t.behavior_prob);
        rows.diagnostics.add_rho(w);
        rows.diagnostics.add_kl(kl_to_probs(&dist, &t.behavior_probs));
        rows.weights.push(if settings.retrace { retrace_clip(w.value) } else { w.value });
        rows.targets.push(target);
        rows.advantages.push(target - v);
        rows.old_values.push(v);
        rows.inputs.push(x);
    }
    Ok(rows)
}

fn abort_context(err: Error, d: &Diagnostics) -> Error {
    match err {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "{what} (mean IS weight {}, max IS weight {}, {} clamped)",
            d.mean_rho(),
            d.rho_max,
            d.clamped
        )),
        other => other,
    }
}

/// One step on the IS-weighted actor and value losses with one-step TD
/// advantages; `ρ` enters as a constant.
pub fn dea2c_exploit_update(
    ac: &mut ActorCritic,
    staged: &[Transition],
    settings: &ExploitSettings,
) -> Result<(UpdateStats, Diagnostics)> {
    if staged.is_empty() {
        return Ok((UpdateStats::default(), Diagnostics::default()));
    }
    let rows = off_policy_rows(ac, staged, settings)?;
    let samples: Vec<Sample<'_>> = staged
        .iter()
        .enumerate()
        .map(|(i, t)| Sample {
            input: &rows.inputs[i],
            action: t.action,
            advantage: rows.advantages[i],
            target: rows.targets[i],
            policy: PolicyTerm::LogProb { weight: rows.weights[i] },
            value: ValueTerm::Squared { weight: rows.weights[i] },
            kl_anchor: Some(&t.behavior_probs),
        })
        .collect();
    let stats = ac.step_on(&samples, settings.alpha_e).map_err(|e| abort_context(e, &rows.diagnostics))?;
    Ok((stats, rows.diagnostics))
}

/// Clipped-ratio epochs where the ratio is taken against the recorded
/// behavior probability; the value loss is IS-weighted as in
/// [`dea2c_exploit_update`].
pub fn deppo_exploit_update<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    staged: &[Transition],
    settings: &ExploitSettings,
    ppo: &PpoParams,
    rng: &mut R,
) -> Result<(UpdateStats, Diagnostics)> {
    if staged.is_empty() {
        return Ok((UpdateStats::default(), Diagnostics::default()));
    }
    let rows = off_policy_rows(ac, staged, settings)?;
    let ppo_rows: Vec<PpoRow<'_>> = staged
        .iter()
        .enumerate()
        .map(|(i, t)| PpoRow {
            input: &rows.inputs[i],
            action: t.action,
            advantage: rows.advantages[i],
            target: rows.targets[i],
            reference_log_prob: t.behavior_prob.max(BEHAVIOR_FLOOR).ln(),
            old_value: rows.old_values[i],
            value_weight: rows.weights[i],
            kl_anchor: Some(&t.behavior_probs),
        })
        .collect();
    let stats = ac.ppo_epochs(&ppo_rows, ppo, settings.alpha_e, rng).map_err(|e| abort_context(e, &rows.diagnostics))?;
    Ok((stats, rows.diagnostics))
}

/// Delegates to [`QLearner::dqn_update`]; the replay buffer is not modified.
pub fn dedqn_exploit_update<R: Rng + ?Sized>(
    q: &mut QLearner,
    buffer: &ReplayBuffer,
    gamma: f64,
    rng: &mut R,
) -> Result<Option<crate::agents::DqnStats>> {
    q.dqn_update(buffer, gamma, rng)
}

/// A2C step of `π_β` on the block's training rewards, optionally pulled
/// towards `anchors` (the exploitation policy on each visited state).
pub fn exploration_update(
    explore: &mut ActorCritic,
    batch: &RolloutBatch,
    gamma: f64,
    alpha_beta: f64,
    anchors: Option<&[Vec<f64>]>,
) -> Result<UpdateStats> {
    match anchors {
        Some(a) if alpha_beta > 0.0 => explore.a2c_update(batch, gamma, Some((alpha_beta, a))),
        _ => explore.a2c_update(batch, gamma, None),
    }
}

/// The exploitation side of a decoupled agent.
#[derive(Clone, Debug)]
pub enum ExploitLearner {
    A2c(ActorCritic),
    Ppo { ac: ActorCritic, ppo: PpoParams },
    Dqn { q: QLearner, buffer: ReplayBuffer },
}

impl ExploitLearner {
    /// `π_e(s)` on a raw observation; DQN uses a softmax over Q-values.
    pub fn distribution(&self, obs: &Observation) -> Result<Categorical> {
        let x = obs.to_vec();
        match self {
            ExploitLearner::A2c(ac) | ExploitLearner::Ppo { ac, .. } => ac.distribution(&x),
            ExploitLearner::Dqn { q, .. } => Ok(softmax_categorical(&q.q_values(&x)?)),
        }
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<usize> {
        let x = obs.to_vec();
        match self {
            ExploitLearner::A2c(ac) | ExploitLearner::Ppo { ac, .. } => ac.greedy_action(&x),
            ExploitLearner::Dqn { q, .. } => q.greedy_action(&x),
        }
    }
}

/// Exploration learner, exploitation learner and the staging store `D`.
#[derive(Clone, Debug)]
pub struct DecoupledState {
    pub explore: ActorCritic,
    pub exploit: ExploitLearner,
    /// Transitions awaiting the next on-policy-style exploitation update.
    pub staged: Vec<Transition>,
    pub settings: ExploitSettings,
    pub t_dec: usize,
    pub alpha_beta: f64,
    ticks: usize,
}

impl DecoupledState {
    pub fn new<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<Self> {
        let spec = config.env_spec();
        let (dim, actions) = (spec.observation_dim(), spec.num_actions());
        let explore = ActorCritic::new(dim, actions, config.explore_params(), rng)?;
        let exploit = match config.algo.name {
            crate::agents::Algo::DeA2c => ExploitLearner::A2c(ActorCritic::new(dim, actions, config.actor_critic_params(), rng)?),
            crate::agents::Algo::DePpo => ExploitLearner::Ppo {
                ac: ActorCritic::new(dim, actions, config.actor_critic_params(), rng)?,
                ppo: config.ppo_params(),
            },
            crate::agents::Algo::DeDqn => ExploitLearner::Dqn {
                q: QLearner::new(dim, actions, config.dqn_params(), rng)?,
                buffer: ReplayBuffer::new(config.algo.buffer_capacity),
            },
            other => return Err(Error::config("algo.name", format!("`{other}` is not a decoupled algorithm"))),
        };
        Ok(DecoupledState {
            explore,
            exploit,
            staged: Vec::new(),
            settings: ExploitSettings {
                gamma: config.gamma,
                retrace: config.decoupled.retrace,
                alpha_e: config.decoupled.alpha_e,
            },
            t_dec: config.decoupled.t_dec,
            alpha_beta: config.decoupled.alpha_beta,
            ticks: 0,
        })
    }

    /// Rollout blocks observed so far.
    pub fn ticks(&self) -> usize {
        self.ticks
    }

    /// Updates `π_e` from the staging store; clears it for the actor-critic
    /// variants.
    pub fn exploit_update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Diagnostics> {
        match &mut self.exploit {
            ExploitLearner::A2c(ac) => {
                let (_, d) = dea2c_exploit_update(ac, &self.staged, &self.settings)?;
                self.staged.clear();
                Ok(d)
            }
            ExploitLearner::Ppo { ac, ppo } => {
                let (_, d) = deppo_exploit_update(ac, &self.staged, &self.settings, ppo, rng)?;
                self.staged.clear();
                Ok(d)
            }
            ExploitLearner::Dqn { q, buffer } => {
                dedqn_exploit_update(q, buffer, self.settings.gamma, rng)?;
                Ok(Diagnostics::default())
            }
        }
    }
}

impl Learner for DecoupledState {
    fn act<R: Rng + ?Sized>(&mut self, _obs: &Observation, input: &[f64], _episode: usize, rng: &mut R) -> Result<Action> {
        let dist = self.explore.distribution(input)?;
        let action = dist.sample(rng);
        Ok(Action { action, prob: dist.prob(action), probs: dist.probs().to_vec() })
    }

    fn bootstrap_value(&self, input: &[f64]) -> Result<f64> {
        self.explore.state_value(input)
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: RolloutBatch, gamma: f64, rng: &mut R) -> Result<Diagnostics> {
        let anchors = if self.alpha_beta > 0.0 {
            Some(batch.iter().map(|t| Ok(self.exploit.distribution(&t.obs)?.probs().to_vec())).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        exploration_update(&mut self.explore, &batch, gamma, self.alpha_beta, anchors.as_deref())?;

        let mut diagnostics = Diagnostics::default();
        match &mut self.exploit {
            ExploitLearner::Dqn { buffer, .. } => {
                for t in batch.iter() {
                    buffer.push(Experience {
                        obs: t.obs,
                        action: t.action,
                        reward: t.reward_ext,
                        next_obs: t.next_obs,
                        done: t.done,
                    });
                }
                for t in batch.iter() {
                    let dist = self.exploit.distribution(&t.obs)?;
                    diagnostics.add_kl(kl_to_probs(&dist, &t.behavior_probs));
                }
            }
            _ => self.staged.extend(batch.iter().cloned()),
        }

        self.ticks += 1;
        if self.ticks.is_multiple_of(self.t_dec) {
            diagnostics.merge(&self.exploit_update(rng)?);
        }
        Ok(diagnostics)
    }

    fn greedy_action(&self, obs: &Observation, _input: &[f64]) -> Result<usize> {
        self.exploit.greedy_action(obs)
    }
}

/// Full decoupled training run for one seed.
pub fn run_decoupled_training(config: &ExperimentConfig, seed: u64, sink: &mut dyn EvalSink) -> Result<RunLog> {
    crate::harness::train(config, seed, sink, DecoupledState::new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Categorical;

    #[test]
    fn is_weight_examples() {
        assert_eq!(is_weight(0.5, 0.25), IsWeight { value: 2.0, clamped: false });
        assert_eq!(is_weight(0.3, 0.3).value, 1.0);
        let w = is_weight(0.9, 1e-12);
        assert!(w.clamped);
        assert!((w.value - 0.9 / 1e-8).abs() < 1e-3);
    }

    #[test]
    fn retrace_examples() {
        assert_eq!(retrace_clip(9.0), 1.0);
        assert_eq!(retrace_clip(0.3), 0.3);
        assert_eq!(retrace_clip(1.0), 1.0);
    }

    #[test]
    fn kl_examples() {
        let half = Categorical::from_probs(vec![0.5, 0.5]).unwrap();
        let one = Categorical::from_probs(vec![1.0, 0.0]).unwrap();
        let q = Categorical::from_probs(vec![0.75, 0.25]).unwrap();
        assert_eq!(kl_divergence(&half, &half), 0.0);
        assert!((kl_divergence(&one, &half) - std::f64::consts::LN_2).abs() < 1e-12);
        let oracle = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((kl_divergence(&q, &half) - oracle).abs() < 1e-12);
        assert!((oracle - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn training_reward_modes() {
        assert_eq!(training_reward(1.0, 0.5, 2.0, false), 2.0);
        assert_eq!(training_reward(1.0, 0.5, 2.0, true), 1.0);
        assert_eq!(training_reward(-3.0, 0.0, 0.0, false), -3.0);
    }

    #[test]
    fn diagnostics_merge() {
        let mut a = Diagnostics::default();
        assert!(a.mean_rho().is_nan());
        a.add_rho(is_weight(0.5, 0.25));
        let mut b = Diagnostics::default();
        b.add_rho(is_weight(0.9, 1e-12));
        b.add_kl(0.2);
        a.merge(&b);
        assert_eq!(a.rho_count, 2);
        assert_eq!(a.clamped, 1);
        assert!(a.rho_max > 1e7);
        assert_eq!(a.mean_kl(), 0.2);
    }
}
