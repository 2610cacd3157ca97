//! Intrinsic reward generators and running normalization.
//!
//! Count-based bonuses use `1 / sqrt(N(s))` over the state the transition
//! leads to; prediction-based bonuses are squared L2 prediction errors in a
//! learned (ICM, RIDE) or fixed random (RND) 16-dimensional embedding.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::Observation;
use crate::error::{check_dim, Error, Result};
use crate::nn::{softmax_categorical, Activation, DenseNet, Gradients, Trace};

pub const EMBED_HIDDEN: usize = 64;
pub const PREDICTOR_HIDDEN: usize = 64;
pub const INTRINSIC_ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntrinsicKind {
    None,
    Count,
    HashCount,
    Icm,
    Rnd,
    Ride,
}

impl IntrinsicKind {
    pub const ALL: [IntrinsicKind; 6] = [
        IntrinsicKind::None,
        IntrinsicKind::Count,
        IntrinsicKind::HashCount,
        IntrinsicKind::Icm,
        IntrinsicKind::Rnd,
        IntrinsicKind::Ride,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntrinsicKind::None => "none",
            IntrinsicKind::Count => "count",
            IntrinsicKind::HashCount => "hash_count",
            IntrinsicKind::Icm => "icm",
            IntrinsicKind::Rnd => "rnd",
            IntrinsicKind::Ride => "ride",
        }
    }

    pub fn is_count_based(self) -> bool {
        matches!(self, IntrinsicKind::Count | IntrinsicKind::HashCount)
    }

    pub fn is_prediction_based(self) -> bool {
        matches!(self, IntrinsicKind::Icm | IntrinsicKind::Rnd | IntrinsicKind::Ride)
    }
}

impl fmt::Display for IntrinsicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntrinsicKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        IntrinsicKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown intrinsic reward `{s}`"))
    }
}

/// Hyperparameters shared by all generators; each kind reads what it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicParams {
    pub count_increment: f64,
    pub learning_rate: f64,
    pub forward_coef: f64,
    pub inverse_coef: f64,
    pub hash_bits: usize,
    pub embed_dim: usize,
}

impl Default for IntrinsicParams {
    fn default() -> Self {
        IntrinsicParams {
            count_increment: 1.0,
            learning_rate: 1e-5,
            forward_coef: 5.0,
            inverse_coef: 1.0,
            hash_bits: 16,
            embed_dim: 16,
        }
    }
}

/// `r = r_ext + λ·r_int`.
#[inline]
pub fn combine(r_ext: f64, r_int: f64, lambda: f64) -> f64 {
    r_ext + lambda * r_int
}

/// Visitation masses keyed by a discrete state key.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    increment: f64,
    counts: HashMap<u128, f64>,
}

impl CountTable {
    pub fn new(increment: f64) -> Self {
        assert!(increment > 0.0, "count increment must be positive");
        CountTable { increment, counts: HashMap::new() }
    }

    pub fn count(&self, key: u128) -> f64 {
        self.counts.get(&key).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn clear(&mut self) {
        self.counts.clear();
    }

    /// Increments `N(key)` by the configured increment and returns the new mass.
    pub fn visit(&mut self, key: u128) -> f64 {
        let n = self.counts.entry(key).or_insert(0.0);
        *n += self.increment;
        *n
    }

    /// Increment-then-reward: the first visit yields `1 / sqrt(c)`.
    pub fn count_reward(&mut self, key: u128) -> f64 {
        1.0 / self.visit(key).sqrt()
    }
}

/// Sign-of-random-projection hashing into `k ≤ 128` bits.
#[derive(Clone, Debug, PartialEq)]
pub struct SimHasher {
    bits: usize,
    dim: usize,
    projection: Vec<f64>,
}

impl SimHasher {
    pub fn new<R: Rng + ?Sized>(bits: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if bits == 0 || bits > 128 {
            return Err(Error::config("intrinsic.hash_k", format!("must be in 1..=128, got {bits}")));
        }
        let projection = (0..bits * dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(SimHasher { bits, dim, projection })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Bit `i` is set when `A_i · obs ≥ 0`.
    pub fn key(&self, obs: &[f64]) -> Result<u128> {
        check_dim("SimHash input", self.dim, obs.len())?;
        let mut key = 0u128;
        for (i, row) in self.projection.chunks_exact(self.dim).enumerate() {
            let dot: f64 = row.iter().zip(obs).map(|(a, x)| a * x).sum();
            if dot >= 0.0 {
                key |= 1u128 << i;
            }
        }
        Ok(key)
    }

    pub fn projection_row(&self, bit: usize) -> &[f64] {
        &self.projection[bit * self.dim..(bit + 1) * self.dim]
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn one_hot(index: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}

/// One transition as seen by a prediction model.
#[derive(Clone, Debug)]
pub struct ModelSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub next_obs: Vec<f64>,
}

/// Gradients for the three ICM networks.
#[derive(Clone, Debug)]
pub struct IcmGradients {
    pub embed: Gradients,
    pub forward: Gradients,
    pub inverse: Gradients,
}

/// Embedding, forward-dynamics and inverse-dynamics networks trained jointly.
///
/// The forward loss does not reach the embedding; features are shaped by the
/// inverse loss only.
#[derive(Clone, Debug)]
pub struct IcmModel {
    pub embed: DenseNet,
    pub forward: DenseNet,
    pub inverse: DenseNet,
    num_actions: usize,
    learning_rate: f64,
    forward_coef: f64,
    inverse_coef: f64,
}

impl IcmModel {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        params: &IntrinsicParams,
        rng: &mut R,
    ) -> Result<Self> {
        let e = params.embed_dim;
        Ok(IcmModel {
            embed: DenseNet::new(&[obs_dim, EMBED_HIDDEN, EMBED_HIDDEN, e], Activation::Relu, rng)?,
            forward: DenseNet::new(&[e + num_actions, PREDICTOR_HIDDEN, e], Activation::Relu, rng)?,
            inverse: DenseNet::new(&[2 * e, PREDICTOR_HIDDEN, num_actions], Activation::Relu, rng)?,
            num_actions,
            learning_rate: params.learning_rate,
            forward_coef: params.forward_coef,
            inverse_coef: params.inverse_coef,
        })
    }

    pub fn embedding(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.embed.forward(obs)
    }

    fn forward_input(&self, embedding: &[f64], action: usize) -> Vec<f64> {
        let mut x = embedding.to_vec();
        x.extend(one_hot(action, self.num_actions));
        x
    }

    /// `‖φ̂(s′) − φ(s′)‖²` without touching the parameters.
    pub fn prediction_error(&self, sample: &ModelSample) -> Result<f64> {
        let e = self.embed.forward(&sample.obs)?;
        let e_next = self.embed.forward(&sample.next_obs)?;
        let pred = self.forward.forward(&self.forward_input(&e, sample.action))?;
        Ok(squared_distance(&pred, &e_next))
    }

    /// `fc · forward MSE + ic · inverse cross-entropy`, averaged over the batch.
    pub fn loss(&self, batch: &[ModelSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let e = self.embed.forward(&s.obs)?;
            let e_next = self.embed.forward(&s.next_obs)?;
            let pred = self.forward.forward(&self.forward_input(&e, s.action))?;
            let fwd = squared_distance(&pred, &e_next) / e.len() as f64;
            let mut inv_in = e.clone();
            inv_in.extend_from_slice(&e_next);
            let logits = self.inverse.forward(&inv_in)?;
            let ce = -softmax_categorical(&logits).log_probs()[s.action];
            total += self.forward_coef * fwd + self.inverse_coef * ce;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn gradients(&self, batch: &[ModelSample]) -> Result<IcmGradients> {
        let mut g = IcmGradients {
            embed: self.embed.zero_gradients(),
            forward: self.forward.zero_gradients(),
            inverse: self.inverse.zero_gradients(),
        };
        let b = batch.len() as f64;
        for s in batch {
            let t: Trace = self.embed.forward_trace(&s.obs)?;
            let t_next = self.embed.forward_trace(&s.next_obs)?;
            let (e, e_next) = (t.output(), t_next.output());
            let dim = e.len();

            let fwd_trace = self.forward.forward_trace(&self.forward_input(e, s.action))?;
            let up: Vec<f64> = fwd_trace
                .output()
                .iter()
                .zip(e_next)
                .map(|(p, y)| self.forward_coef * 2.0 * (p - y) / (dim as f64 * b))
                .collect();
            self.forward.backward_accumulate(&fwd_trace, &up, &mut g.forward)?;

            let mut inv_in = e.to_vec();
            inv_in.extend_from_slice(e_next);
            let inv_trace = self.inverse.forward_trace(&inv_in)?;
            let probs = softmax_categorical(inv_trace.output());
            let up: Vec<f64> = probs
                .probs()
                .iter()
                .enumerate()
                .map(|(a, p)| self.inverse_coef * (p - f64::from(u8::from(a == s.action))) / b)
                .collect();
            let d_in = self.inverse.backward_accumulate(&inv_trace, &up, &mut g.inverse)?;
            self.embed.backward_accumulate(&t, &d_in[..dim], &mut g.embed)?;
            self.embed.backward_accumulate(&t_next, &d_in[dim..], &mut g.embed)?;
        }
        Ok(g)
    }

    pub fn update(&mut self, batch: &[ModelSample]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let g = self.gradients(batch)?;
        let loss = self.loss(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("ICM loss".into()));
        }
        self.embed.adam_step(&g.embed, self.learning_rate, INTRINSIC_ADAM_EPS)?;
        self.forward.adam_step(&g.forward, self.learning_rate, INTRINSIC_ADAM_EPS)?;
        self.inverse.adam_step(&g.inverse, self.learning_rate, INTRINSIC_ADAM_EPS)?;
        Ok(())
    }

    /// Prediction errors computed before one joint gradient step on the batch.
    pub fn rewards_and_update(&mut self, batch: &[ModelSample]) -> Result<Vec<f64>> {
        let rewards = batch.iter().map(|s| self.prediction_error(s)).collect::<Result<Vec<_>>>()?;
        self.update(batch)?;
        Ok(rewards)
    }
}

/// Predictor network regressing a fixed random target embedding.
#[derive(Clone, Debug)]
pub struct RndModel {
    target: DenseNet,
    pub predictor: DenseNet,
    learning_rate: f64,
}

impl RndModel {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, params: &IntrinsicParams, rng: &mut R) -> Result<Self> {
        let sizes = [obs_dim, EMBED_HIDDEN, EMBED_HIDDEN, params.embed_dim];
        Ok(RndModel {
            target: DenseNet::new(&sizes, Activation::Relu, rng)?,
            predictor: DenseNet::new(&sizes, Activation::Relu, rng)?,
            learning_rate: params.learning_rate,
        })
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn prediction_error(&self, obs: &[f64]) -> Result<f64> {
        Ok(squared_distance(&self.predictor.forward(obs)?, &self.target.forward(obs)?))
    }

    /// Mean over the batch of the per-dimension squared error.
    pub fn loss(&self, batch: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for obs in batch {
            total += self.prediction_error(obs)? / self.target.output_dim() as f64;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn gradients(&self, batch: &[Vec<f64>]) -> Result<Gradients> {
        let mut g = self.predictor.zero_gradients();
        let scale = 2.0 / (batch.len() as f64 * self.target.output_dim() as f64);
        for obs in batch {
            let trace = self.predictor.forward_trace(obs)?;
            let target = self.target.forward(obs)?;
            let up: Vec<f64> = trace.output().iter().zip(&target).map(|(p, t)| scale * (p - t)).collect();
            self.predictor.backward_accumulate(&trace, &up, &mut g)?;
        }
        Ok(g)
    }

    pub fn rewards_and_update(&mut self, batch: &[Vec<f64>]) -> Result<Vec<f64>> {
        let rewards = batch.iter().map(|o| self.prediction_error(o)).collect::<Result<Vec<_>>>()?;
        if !batch.is_empty() {
            let g = self.gradients(batch)?;
            self.predictor.adam_step(&g, self.learning_rate, INTRINSIC_ADAM_EPS)?;
        }
        Ok(rewards)
    }
}

/// ICM machinery plus per-lane episodic visitation counts.
#[derive(Clone, Debug)]
pub struct RideModel {
    pub icm: IcmModel,
    episodic: Vec<CountTable>,
}

impl RideModel {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        num_lanes: usize,
        params: &IntrinsicParams,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(RideModel {
            icm: IcmModel::new(obs_dim, num_actions, params, rng)?,
            episodic: vec![CountTable::new(1.0); num_lanes],
        })
    }

    pub fn episodic_counts(&self, lane: usize) -> &CountTable {
        &self.episodic[lane]
    }

    pub fn start_episode(&mut self, lane: usize) {
        self.episodic[lane].clear();
    }

    /// `‖φ(s′) − φ(s)‖² / sqrt(N_ep(s′))` after counting `s′` in the lane's
    /// episodic table.
    pub fn reward(&mut self, lane: usize, next_key: u128, sample: &ModelSample) -> Result<f64> {
        let n = self.episodic[lane].visit(next_key);
        let e = self.icm.embedding(&sample.obs)?;
        let e_next = self.icm.embedding(&sample.next_obs)?;
        Ok(squared_distance(&e_next, &e) / n.sqrt())
    }
}

/// One environment transition handed to [`IntrinsicReward::rewards_and_update`].
#[derive(Clone, Copy, Debug)]
pub struct IntrinsicInput {
    pub lane: usize,
    pub obs: Observation,
    pub action: usize,
    pub next_obs: Observation,
}

#[derive(Clone, Debug)]
pub enum IntrinsicReward {
    None,
    Count(CountTable),
    HashCount { hasher: SimHasher, table: CountTable },
    Icm(IcmModel),
    Rnd(RndModel),
    Ride(RideModel),
}

impl IntrinsicReward {
    pub fn new<R: Rng + ?Sized>(
        kind: IntrinsicKind,
        params: &IntrinsicParams,
        obs_dim: usize,
        num_actions: usize,
        num_lanes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            IntrinsicKind::None => IntrinsicReward::None,
            IntrinsicKind::Count => IntrinsicReward::Count(CountTable::new(params.count_increment)),
            IntrinsicKind::HashCount => IntrinsicReward::HashCount {
                hasher: SimHasher::new(params.hash_bits, obs_dim, rng)?,
                table: CountTable::new(params.count_increment),
            },
            IntrinsicKind::Icm => IntrinsicReward::Icm(IcmModel::new(obs_dim, num_actions, params, rng)?),
            IntrinsicKind::Rnd => IntrinsicReward::Rnd(RndModel::new(obs_dim, params, rng)?),
            IntrinsicKind::Ride => {
                IntrinsicReward::Ride(RideModel::new(obs_dim, num_actions, num_lanes, params, rng)?)
            }
        })
    }

    pub fn kind(&self) -> IntrinsicKind {
        match self {
            IntrinsicReward::None => IntrinsicKind::None,
            IntrinsicReward::Count(_) => IntrinsicKind::Count,
            IntrinsicReward::HashCount { .. } => IntrinsicKind::HashCount,
            IntrinsicReward::Icm(_) => IntrinsicKind::Icm,
            IntrinsicReward::Rnd(_) => IntrinsicKind::Rnd,
            IntrinsicReward::Ride(_) => IntrinsicKind::Ride,
        }
    }

    /// Clears episode-local state for one lane.
    pub fn start_episode(&mut self, lane: usize) {
        if let IntrinsicReward::Ride(m) = self {
            m.start_episode(lane);
        }
    }

    /// Rewards for one synchronous environment step, followed by at most one
    /// model update on the same transitions.
    pub fn rewards_and_update(&mut self, batch: &[IntrinsicInput]) -> Result<Vec<f64>> {
        let samples = || {
            batch
                .iter()
                .map(|t| ModelSample { obs: t.obs.to_vec(), action: t.action, next_obs: t.next_obs.to_vec() })
                .collect::<Vec<_>>()
        };
        match self {
            IntrinsicReward::None => Ok(vec![0.0; batch.len()]),
            IntrinsicReward::Count(table) => {
                Ok(batch.iter().map(|t| table.count_reward(t.next_obs.index() as u128)).collect())
            }
            IntrinsicReward::HashCount { hasher, table } => batch
                .iter()
                .map(|t| Ok(table.count_reward(hasher.key(&t.next_obs.to_vec())?)))
                .collect(),
            IntrinsicReward::Icm(model) => model.rewards_and_update(&samples()),
            IntrinsicReward::Rnd(model) => {
                let states: Vec<Vec<f64>> = batch.iter().map(|t| t.next_obs.to_vec()).collect();
                model.rewards_and_update(&states)
            }
            IntrinsicReward::Ride(model) => {
                let samples = samples();
                let rewards = batch
                    .iter()
                    .zip(&samples)
                    .map(|(t, s)| model.reward(t.lane, t.next_obs.index() as u128, s))
                    .collect::<Result<Vec<_>>>()?;
                model.icm.update(&samples)?;
                Ok(rewards)
            }
        }
    }
}

/// Welford running mean and population variance per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNormalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    clip: f64,
}

pub const NORMALIZER_EPS: f64 = 1e-8;
pub const NORMALIZER_CLIP: f64 = 10.0;

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self::with_clip(dim, NORMALIZER_CLIP)
    }

    pub fn with_clip(dim: usize, clip: f64) -> Self {
        RunningNormalizer { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], clip }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.mean.len()];
        }
        self.m2.iter().map(|m| m / self.count as f64).collect()
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *m2 += delta * (xi - *m);
        }
    }

    /// `(x − mean) / sqrt(var + 1e-8)`, clipped to `±clip`.
    pub fn normalize_centered(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((xi, m), v)| ((xi - m) / (v + NORMALIZER_EPS).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }

    /// `x / sqrt(var + 1e-8)` for a scalar stream, clipped to `±clip`.
    pub fn normalize_scale(&self, x: f64) -> f64 {
        (x / (self.variance()[0] + NORMALIZER_EPS).sqrt()).clamp(-self.clip, self.clip)
    }
}

/// Optional observation normalization; identity when disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsNormalizer(Option<RunningNormalizer>);

impl ObsNormalizer {
    pub fn new(enabled: bool, dim: usize) -> Self {
        ObsNormalizer(enabled.then(|| RunningNormalizer::new(dim)))
    }

    pub fn is_enabled(&self) -> bool {
        self.0.is_some()
    }

    /// Folds `x` into the statistics, then normalizes it.
    pub fn observe(&mut self, x: Vec<f64>) -> Vec<f64> {
        match &mut self.0 {
            Some(n) => {
                n.update(&x);
                n.normalize_centered(&x)
            }
            None => x,
        }
    }

    /// Normalizes with frozen statistics.
    pub fn apply(&self, x: Vec<f64>) -> Vec<f64> {
        match &self.0 {
            Some(n) => n.normalize_centered(&x),
            None => x,
        }
    }
}

/// Optional reward scaling; identity when disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNormalizer(Option<RunningNormalizer>);

impl RewardNormalizer {
    pub fn new(enabled: bool) -> Self {
        RewardNormalizer(enabled.then(|| RunningNormalizer::new(1)))
    }

    pub fn observe(&mut self, r: f64) -> f64 {
        match &mut self.0 {
            Some(n) => {
                n.update(&[r]);
                n.normalize_scale(r)
            }
            None => r,
        }
    }
}
