//! Baseline learners: n-step actor-critic (A2C), clipped-surrogate PPO and
//! Double-DQN with a FIFO replay buffer.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, entropy, softmax_categorical, Activation, Categorical, DenseNet, Gradients};

pub const HIDDEN_LAYERS: [usize; 2] = [64, 64];
/// Floor applied to the reference distribution inside KL terms.
pub const KL_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algo {
    A2c,
    Ppo,
    Dqn,
    DeA2c,
    DePpo,
    DeDqn,
}

impl Algo {
    pub const ALL: [Algo; 6] = [Algo::A2c, Algo::Ppo, Algo::Dqn, Algo::DeA2c, Algo::DePpo, Algo::DeDqn];

    pub fn name(self) -> &'static str {
        match self {
            Algo::A2c => "a2c",
            Algo::Ppo => "ppo",
            Algo::Dqn => "dqn",
            Algo::DeA2c => "dea2c",
            Algo::DePpo => "deppo",
            Algo::DeDqn => "dedqn",
        }
    }

    pub fn is_decoupled(self) -> bool {
        matches!(self, Algo::DeA2c | Algo::DePpo | Algo::DeDqn)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Algo::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Network sizes `input, 64, 64, output`.
pub fn mlp_sizes(input: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(HIDDEN_LAYERS);
    sizes.push(output);
    sizes
}

/// Argmax with ties broken towards the lowest index.
pub fn greedy_action(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `Σ p (log p − log max(q, 1e-8))` with `0 · log 0 = 0`.
pub fn kl_divergence(p: &Categorical, q: &[f64]) -> f64 {
    p.probs()
        .iter()
        .zip(p.log_probs())
        .zip(q)
        .filter(|((pi, _), _)| **pi > 0.0)
        .map(|((pi, lpi), qi)| pi * (lpi - qi.max(KL_FLOOR).ln()))
        .sum()
}

/// One environment step in a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// The acting network's view of `obs` (normalized when enabled).
    pub input: Vec<f64>,
    pub action: usize,
    pub reward_ext: f64,
    /// Reward the acting learner is trained on.
    pub reward_train: f64,
    pub next_obs: Observation,
    pub done: bool,
    /// `π_β(a | s)` recorded at collection time.
    pub behavior_prob: f64,
    pub behavior_probs: Vec<f64>,
}

/// `n_steps x lanes` transitions in collection order plus `V(s_{t+n})` per lane.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    steps: Vec<Vec<Transition>>,
    bootstrap: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(steps: Vec<Vec<Transition>>, bootstrap: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Usage("rollout batch needs at least one step".into()));
        }
        if steps.iter().any(|s| s.len() != bootstrap.len()) {
            return Err(Error::Usage("every rollout step must cover all lanes".into()));
        }
        Ok(RolloutBatch { steps, bootstrap })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_lanes(&self) -> usize {
        self.bootstrap.len()
    }

    pub fn len(&self) -> usize {
        self.n_steps() * self.num_lanes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, t: usize, lane: usize) -> &Transition {
        &self.steps[t][lane]
    }

    pub fn bootstrap(&self) -> &[f64] {
        &self.bootstrap
    }

    /// Time-major iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.steps.iter().flatten()
    }
}

/// Discounted n-step targets on `reward_train`, time-major like
/// [`RolloutBatch::iter`]. A `done` step never bootstraps across the boundary.
pub fn n_step_returns(batch: &RolloutBatch, gamma: f64) -> Vec<f64> {
    n_step_returns_by(batch, gamma, |t| t.reward_train)
}

pub fn n_step_returns_by(batch: &RolloutBatch, gamma: f64, reward: impl Fn(&Transition) -> f64) -> Vec<f64> {
    let (n, k) = (batch.n_steps(), batch.num_lanes());
    let mut out = vec![0.0; n * k];
    for lane in 0..k {
        let mut g = batch.bootstrap[lane];
        for t in (0..n).rev() {
            let tr = batch.get(t, lane);
            g = if tr.done { reward(tr) } else { reward(tr) + gamma * g };
            out[t * k + lane] = g;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCriticParams {
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyTerm {
    /// `−w · A · log π(a|s)` with `w` held constant.
    LogProb { weight: f64 },
    /// `−min(r A, clip(r, 1 ± ε) A)` with `r = π(a|s) / exp(reference_log_prob)`.
    ClippedRatio { reference_log_prob: f64, clip: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValueTerm {
    /// `w · (V(s) − G)²`.
    Squared { weight: f64 },
    /// `w · max((V − G)², (V_old + clip(V − V_old, ±ε) − G)²)`.
    Clipped { old_value: f64, clip: f64, weight: f64 },
}

/// One row of an actor-critic loss.
#[derive(Clone, Debug)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub action: usize,
    pub advantage: f64,
    pub target: f64,
    pub policy: PolicyTerm,
    pub value: ValueTerm,
    /// Reference distribution `q` for an added `α · KL(π(s) ‖ q)` term.
    pub kl_anchor: Option<&'a [f64]>,
}

/// Batch means of the individual loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub entropy: f64,
    pub value: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn total(&self, params: &ActorCriticParams, kl_coef: f64) -> f64 {
        self.policy - params.entropy_coef * self.entropy + params.value_coef * self.value + kl_coef * self.kl
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: LossParts,
    pub grad_norm: f64,
    pub mean_kl: f64,
}

/// Separate policy and value networks with a joint Adam step.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub policy: DenseNet,
    pub value: DenseNet,
    pub params: ActorCriticParams,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        num_actions: usize,
        params: ActorCriticParams,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ActorCritic {
            policy: DenseNet::new(&mlp_sizes(input_dim, num_actions), params.activation, rng)?,
            value: DenseNet::new(&mlp_sizes(input_dim, 1), params.activation, rng)?,
            params,
        })
    }

    pub fn distribution(&self, input: &[f64]) -> Result<Categorical> {
        Ok(softmax_categorical(&self.policy.forward(input)?))
    }

    pub fn state_value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.value.forward(input)?[0])
    }

    pub fn greedy_action(&self, input: &[f64]) -> Result<usize> {
        Ok(greedy_action(&self.policy.forward(input)?))
    }

    /// Mean loss over `samples` and its gradients for (policy, value).
    pub fn loss_and_gradients(&self, samples: &[Sample<'_>], kl_coef: f64) -> Result<(LossParts, Gradients, Gradients)> {
        let mut gp = self.policy.zero_gradients();
        let mut gv = self.value.zero_gradients();
        let mut parts = LossParts::default();
        let b = samples.len() as f64;
        let ent_coef = self.params.entropy_coef;
        for s in samples {
            let p_trace = self.policy.forward_trace(s.input)?;
            let dist = softmax_categorical(p_trace.output());
            let probs = dist.probs();
            let logp = dist.log_probs();
            let mut dz = vec![0.0; probs.len()];

            match s.policy {
                PolicyTerm::LogProb { weight } => {
                    parts.policy -= weight * s.advantage * logp[s.action];
                    for (j, g) in dz.iter_mut().enumerate() {
                        let ind = if j == s.action { 1.0 } else { 0.0 };
                        *g -= weight * s.advantage * (ind - probs[j]);
                    }
                }
                PolicyTerm::ClippedRatio { reference_log_prob, clip } => {
                    let ratio = (logp[s.action] - reference_log_prob).exp();
                    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
                    let unclipped_obj = ratio * s.advantage;
                    let clipped_obj = clipped * s.advantage;
                    parts.policy -= unclipped_obj.min(clipped_obj);
                    if unclipped_obj <= clipped_obj {
                        for (j, g) in dz.iter_mut().enumerate() {
                            let ind = if j == s.action { 1.0 } else { 0.0 };
                            *g -= s.advantage * ratio * (ind - probs[j]);
                        }
                    }
                }
            }

            let h = entropy(&dist);
            parts.entropy += h;
            if ent_coef != 0.0 {
                for (j, g) in dz.iter_mut().enumerate() {
                    *g += ent_coef * probs[j] * (logp[j] + h);
                }
            }

            if let Some(q) = s.kl_anchor {
                let kl = kl_divergence(&dist, q);
                parts.kl += kl;
                if kl_coef != 0.0 {
                    for (j, g) in dz.iter_mut().enumerate() {
                        *g += kl_coef * probs[j] * (logp[j] - q[j].max(KL_FLOOR).ln() - kl);
                    }
                }
            }

            for g in dz.iter_mut() {
                *g /= b;
            }
            self.policy.backward_accumulate(&p_trace, &dz, &mut gp)?;

            let v_trace = self.value.forward_trace(s.input)?;
            let v = v_trace.output()[0];
            let dv = match s.value {
                ValueTerm::Squared { weight } => {
                    parts.value += weight * (v - s.target).powi(2);
                    2.0 * weight * (v - s.target)
                }
                ValueTerm::Clipped { old_value, clip, weight } => {
                    let vc = old_value + (v - old_value).clamp(-clip, clip);
                    let (lu, lc) = ((v - s.target).powi(2), (vc - s.target).powi(2));
                    parts.value += weight * lu.max(lc);
                    if lu >= lc {
                        2.0 * weight * (v - s.target)
                    } else {
                        0.0
                    }
                }
            };
            let up = [self.params.value_coef * dv / b];
            self.value.backward_accumulate(&v_trace, &up, &mut gv)?;
        }
        parts.policy /= b;
        parts.entropy /= b;
        parts.value /= b;
        parts.kl /= b;
        Ok((parts, gp, gv))
    }

    /// Clips the joint gradient norm and takes one Adam step on both nets.
    pub fn apply_gradients(&mut self, mut gp: Gradients, mut gv: Gradients) -> Result<f64> {
        let norm = clip_global_norm(&mut [&mut gp, &mut gv], self.params.max_grad_norm);
        self.policy.adam_step(&gp, self.params.learning_rate, self.params.adam_eps)?;
        self.value.adam_step(&gv, self.params.learning_rate, self.params.adam_eps)?;
        Ok(norm)
    }

    pub fn step_on(&mut self, samples: &[Sample<'_>], kl_coef: f64) -> Result<UpdateStats> {
        let (loss, gp, gv) = self.loss_and_gradients(samples, kl_coef)?;
        let total = loss.total(&self.params, kl_coef);
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("actor-critic loss {loss:?}")));
        }
        let grad_norm = self.apply_gradients(gp, gv)?;
        Ok(UpdateStats { loss, grad_norm, mean_kl: loss.kl })
    }

    /// A2C samples: advantages `G − V(s)` from n-step targets, all weights 1.
    pub fn a2c_targets(&self, batch: &RolloutBatch, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let returns = n_step_returns(batch, gamma);
        let advantages = batch
            .iter()
            .zip(&returns)
            .map(|(t, g)| Ok(g - self.state_value(&t.input)?))
            .collect::<Result<Vec<_>>>()?;
        Ok((returns, advantages))
    }

    /// One A2C step. `kl` optionally adds `α · KL(π(s) ‖ anchor(s))` with
    /// one anchor distribution per transition in time-major order.
    pub fn a2c_update(&mut self, batch: &RolloutBatch, gamma: f64, kl: Option<(f64, &[Vec<f64>])>) -> Result<UpdateStats> {
        let (returns, advantages) = self.a2c_targets(batch, gamma)?;
        let samples: Vec<Sample<'_>> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| Sample {
                input: &t.input,
                action: t.action,
                advantage: advantages[i],
                target: returns[i],
                policy: PolicyTerm::LogProb { weight: 1.0 },
                value: ValueTerm::Squared { weight: 1.0 },
                kl_anchor: kl.map(|(_, anchors)| anchors[i].as_slice()),
            })
            .collect();
        let kl_coef = kl.map_or(0.0, |(alpha, _)| alpha);
        self.step_on(&samples, kl_coef)
    }

    /// PPO on one rollout: `epochs` passes over `minibatches` shuffled
    /// transition-level splits against the pre-update policy.
    pub fn ppo_update<R: Rng + ?Sized>(
        &mut self,
        batch: &RolloutBatch,
        gamma: f64,
        ppo: &PpoParams,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let (returns, advantages) = self.a2c_targets(batch, gamma)?;
        let transitions: Vec<&Transition> = batch.iter().collect();
        let mut old_log_probs = Vec::with_capacity(transitions.len());
        let mut old_values = Vec::with_capacity(transitions.len());
        for t in &transitions {
            old_log_probs.push(self.distribution(&t.input)?.log_probs()[t.action]);
            old_values.push(self.state_value(&t.input)?);
        }
        let rows: Vec<PpoRow<'_>> = transitions
            .iter()
            .enumerate()
            .map(|(i, t)| PpoRow {
                input: &t.input,
                action: t.action,
                advantage: advantages[i],
                target: returns[i],
                reference_log_prob: old_log_probs[i],
                old_value: old_values[i],
                value_weight: 1.0,
                kl_anchor: None,
            })
            .collect();
        self.ppo_epochs(&rows, ppo, 0.0, rng)
    }

    /// Shared PPO epoch loop, also used by the decoupled PPO learner.
    pub fn ppo_epochs<R: Rng + ?Sized>(
        &mut self,
        rows: &[PpoRow<'_>],
        ppo: &PpoParams,
        kl_coef: f64,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let splits = ppo.minibatches.clamp(1, rows.len().max(1));
        let mut last = UpdateStats::default();
        let mut kl_sum = 0.0;
        let mut kl_n = 0usize;
        for _ in 0..ppo.epochs {
            order.shuffle(rng);
            for chunk in split_even(&order, splits) {
                let samples: Vec<Sample<'_>> = chunk.iter().map(|&i| rows[i].sample(ppo)).collect();
                last = self.step_on(&samples, kl_coef)?;
                kl_sum += last.loss.kl * samples.len() as f64;
                kl_n += samples.len();
            }
        }
        last.mean_kl = if kl_n > 0 { kl_sum / kl_n as f64 } else { 0.0 };
        Ok(last)
    }
}

fn split_even(order: &[usize], parts: usize) -> Vec<&[usize]> {
    let n = order.len();
    (0..parts).map(|p| &order[p * n / parts..(p + 1) * n / parts]).filter(|c| !c.is_empty()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoParams {
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip_value_loss: bool,
}

/// Precomputed per-transition quantities for PPO-style epochs.
#[derive(Clone, Debug)]
pub struct PpoRow<'a> {
    pub input: &'a [f64],
    pub action: usize,
    pub advantage: f64,
    pub target: f64,
    pub reference_log_prob: f64,
    pub old_value: f64,
    pub value_weight: f64,
    pub kl_anchor: Option<&'a [f64]>,
}

impl<'a> PpoRow<'a> {
    fn sample(&self, ppo: &PpoParams) -> Sample<'a> {
        Sample {
            input: self.input,
            action: self.action,
            advantage: self.advantage,
            target: self.target,
            policy: PolicyTerm::ClippedRatio { reference_log_prob: self.reference_log_prob, clip: ppo.clip_ratio },
            value: if ppo.clip_value_loss {
                ValueTerm::Clipped { old_value: self.old_value, clip: ppo.clip_ratio, weight: self.value_weight }
            } else {
                ValueTerm::Squared { weight: self.value_weight }
            },
            kl_anchor: self.kl_anchor,
        }
    }
}

/// Compact replay entry; observations stay one-hot indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Experience {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Bounded FIFO store with uniform sampling without replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Experience> {
        let n = batch_size.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| self.items[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DqnParams {
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DqnStats {
    pub loss: f64,
    pub mean_q: f64,
    pub grad_norm: f64,
}

/// Online and soft-updated target Q networks.
#[derive(Clone, Debug)]
pub struct QLearner {
    pub online: DenseNet,
    pub target: DenseNet,
    pub params: DqnParams,
}

impl QLearner {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, num_actions: usize, params: DqnParams, rng: &mut R) -> Result<Self> {
        let online = DenseNet::new(&mlp_sizes(input_dim, num_actions), params.activation, rng)?;
        let target = online.clone();
        Ok(QLearner { online, target, params })
    }

    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(input)
    }

    pub fn greedy_action(&self, input: &[f64]) -> Result<usize> {
        Ok(greedy_action(&self.q_values(input)?))
    }

    /// `r + γ Q_target(s′, argmax_a Q_online(s′, a))`, or `r` at terminals.
    pub fn double_dqn_targets(&self, batch: &[Experience], gamma: f64) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|e| {
                if e.done {
                    return Ok(e.reward);
                }
                let next = e.next_obs.to_vec();
                let a = greedy_action(&self.online.forward(&next)?);
                Ok(e.reward + gamma * self.target.forward(&next)?[a])
            })
            .collect()
    }

    /// Mean squared TD error and its gradient for the online net.
    pub fn loss_and_gradients(&self, batch: &[Experience], targets: &[f64]) -> Result<(f64, f64, Gradients)> {
        let mut g = self.online.zero_gradients();
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        for (e, y) in batch.iter().zip(targets) {
            let trace = self.online.forward_trace(&e.obs.to_vec())?;
            let q = trace.output()[e.action];
            loss += (q - y).powi(2) / b;
            mean_q += q / b;
            let mut up = vec![0.0; self.online.output_dim()];
            up[e.action] = 2.0 * (q - y) / b;
            self.online.backward_accumulate(&trace, &up, &mut g)?;
        }
        Ok((loss, mean_q, g))
    }

    /// One gradient step on `batch`, then a soft target update.
    pub fn update_on(&mut self, batch: &[Experience], gamma: f64) -> Result<DqnStats> {
        let targets = self.double_dqn_targets(batch, gamma)?;
        let (loss, mean_q, mut g) = self.loss_and_gradients(batch, &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("DQN loss".into()));
        }
        let grad_norm = clip_global_norm(&mut [&mut g], self.params.max_grad_norm);
        self.online.adam_step(&g, self.params.learning_rate, self.params.adam_eps)?;
        self.target.soft_update_from(&self.online, self.params.tau);
        Ok(DqnStats { loss, mean_q, grad_norm })
    }

    /// Samples a batch and updates; `None` while the buffer is too small.
    pub fn dqn_update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Option<DqnStats>> {
        if buffer.len() < self.params.batch_size || buffer.is_empty() {
            return Ok(None);
        }
        let batch = buffer.sample(self.params.batch_size, rng);
        self.update_on(&batch, gamma).map(Some)
    }
}
