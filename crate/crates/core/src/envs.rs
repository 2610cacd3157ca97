//! Sparse-reward gridworlds, a lockstep vectorized wrapper and an exact
//! finite-horizon solver.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// A one-hot observation, stored as the index of its single `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    index: usize,
    dim: usize,
}

impl Observation {
    pub fn one_hot(index: usize, dim: usize) -> Self {
        assert!(index < dim, "one-hot index {index} out of range {dim}");
        Observation { index, dim }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self) -> Observation;
    fn step(&mut self, action: usize) -> Result<StepResult>;
    fn is_done(&self) -> bool;
    fn horizon(&self) -> usize;
}

pub const DEEPSEA_ACTIONS: usize = 2;

/// `N x N` grid: one row down per step, the agent chooses left or right.
/// Which action index means "right" is drawn per row from the map seed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeepSeaEnv {
    size: usize,
    right_action: Vec<usize>,
    row: usize,
    column: usize,
}

impl DeepSeaEnv {
    pub fn new(size: usize, map_seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Usage("DeepSea size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(map_seed);
        let right_action = (0..size).map(|_| usize::from(rng.random::<bool>())).collect();
        Ok(DeepSeaEnv { size, right_action, row: 0, column: 0 })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn position(&self) -> (usize, usize) {
        (self.row, self.column)
    }

    /// The action index that moves right in `row`.
    pub fn right_action(&self, row: usize) -> usize {
        self.right_action[row]
    }

    pub fn move_cost(&self) -> f64 {
        0.01 / self.size as f64
    }

    fn observe(&self) -> Observation {
        // The post-terminal row is folded onto the last row so that the
        // encoding stays a one-hot over the N x N grid.
        let row = self.row.min(self.size - 1);
        Observation::one_hot(row * self.size + self.column, self.size * self.size)
    }
}

impl Environment for DeepSeaEnv {
    fn observation_dim(&self) -> usize {
        self.size * self.size
    }

    fn num_actions(&self) -> usize {
        DEEPSEA_ACTIONS
    }

    fn reset(&mut self) -> Observation {
        self.row = 0;
        self.column = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::Usage("step called on a finished DeepSea episode".into()));
        }
        if action >= DEEPSEA_ACTIONS {
            return Err(Error::Usage(format!("DeepSea action {action} out of range")));
        }
        let mut reward = 0.0;
        if action == self.right_action[self.row] {
            if self.column == self.size - 1 {
                reward += 1.0;
            }
            reward -= self.move_cost();
            self.column = (self.column + 1).min(self.size - 1);
        } else {
            self.column = self.column.saturating_sub(1);
        }
        self.row += 1;
        Ok(StepResult { observation: self.observe(), reward, done: self.is_done() })
    }

    fn is_done(&self) -> bool {
        self.row >= self.size
    }

    fn horizon(&self) -> usize {
        self.size
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HallwayAction {
    Left = 0,
    Stay = 1,
    Right = 2,
}

impl HallwayAction {
    pub fn from_index(action: usize) -> Option<Self> {
        match action {
            0 => Some(HallwayAction::Left),
            1 => Some(HallwayAction::Stay),
            2 => Some(HallwayAction::Right),
            _ => None,
        }
    }
}

pub const HALLWAY_ACTIONS: usize = 3;
pub const HALLWAY_STAY_BONUS_PERIOD: usize = 10;
pub const HALLWAY_MOVE_COST: f64 = 0.01;

/// A corridor with the goal `left` cells to the right of the start and
/// `right` further cells beyond it. Episodes last `2 * left` steps.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HallwayEnv {
    left: usize,
    right: usize,
    position: usize,
    t: usize,
    consecutive_stays: usize,
    reached_goal: bool,
}

impl HallwayEnv {
    pub fn new(left: usize, right: usize) -> Result<Self> {
        if left == 0 {
            return Err(Error::Usage("Hallway needs at least one cell left of the goal".into()));
        }
        Ok(HallwayEnv { left, right, position: 0, t: 0, consecutive_stays: 0, reached_goal: false })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn goal(&self) -> usize {
        self.left
    }

    pub fn consecutive_stays(&self) -> usize {
        self.consecutive_stays
    }

    fn observe(&self) -> Observation {
        Observation::one_hot(self.position, self.observation_dim())
    }
}

impl Environment for HallwayEnv {
    fn observation_dim(&self) -> usize {
        self.left + self.right + 1
    }

    fn num_actions(&self) -> usize {
        HALLWAY_ACTIONS
    }

    fn reset(&mut self) -> Observation {
        self.position = 0;
        self.t = 0;
        self.consecutive_stays = 0;
        self.reached_goal = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::Usage("step called on a finished Hallway episode".into()));
        }
        let action = HallwayAction::from_index(action)
            .ok_or_else(|| Error::Usage(format!("Hallway action {action} out of range")))?;
        let last = self.left + self.right;
        let mut reward = 0.0;
        match action {
            HallwayAction::Left => self.position = self.position.saturating_sub(1),
            HallwayAction::Stay => reward -= HALLWAY_MOVE_COST,
            HallwayAction::Right => {
                reward -= HALLWAY_MOVE_COST;
                self.position = (self.position + 1).min(last);
            }
        }
        let at_goal = self.position == self.goal();
        if at_goal && action == HallwayAction::Stay {
            self.consecutive_stays += 1;
            if self.consecutive_stays.is_multiple_of(HALLWAY_STAY_BONUS_PERIOD) {
                reward += 1.0;
            }
        } else {
            self.consecutive_stays = 0;
        }
        if at_goal && !self.reached_goal {
            self.reached_goal = true;
            reward += 1.0;
        }
        self.t += 1;
        Ok(StepResult { observation: self.observe(), reward, done: self.is_done() })
    }

    fn is_done(&self) -> bool {
        self.t >= self.horizon()
    }

    fn horizon(&self) -> usize {
        2 * self.left
    }
}

/// Task description from which fresh environments are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvSpec {
    DeepSea { size: usize, map_seed: u64 },
    Hallway { left: usize, right: usize },
}

impl EnvSpec {
    pub fn build(&self) -> Result<AnyEnv> {
        Ok(match *self {
            EnvSpec::DeepSea { size, map_seed } => AnyEnv::DeepSea(DeepSeaEnv::new(size, map_seed)?),
            EnvSpec::Hallway { left, right } => AnyEnv::Hallway(HallwayEnv::new(left, right)?),
        })
    }

    pub fn observation_dim(&self) -> usize {
        match *self {
            EnvSpec::DeepSea { size, .. } => size * size,
            EnvSpec::Hallway { left, right } => left + right + 1,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            EnvSpec::DeepSea { .. } => DEEPSEA_ACTIONS,
            EnvSpec::Hallway { .. } => HALLWAY_ACTIONS,
        }
    }

    /// Directory-friendly task label, e.g. `deepsea-10` or `hallway-10-0`.
    pub fn task_name(&self) -> String {
        match *self {
            EnvSpec::DeepSea { size, .. } => format!("deepsea-{size}"),
            EnvSpec::Hallway { left, right } => format!("hallway-{left}-{right}"),
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.task_name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AnyEnv {
    DeepSea(DeepSeaEnv),
    Hallway(HallwayEnv),
}

impl Environment for AnyEnv {
    fn observation_dim(&self) -> usize {
        match self {
            AnyEnv::DeepSea(e) => e.observation_dim(),
            AnyEnv::Hallway(e) => e.observation_dim(),
        }
    }

    fn num_actions(&self) -> usize {
        match self {
            AnyEnv::DeepSea(e) => e.num_actions(),
            AnyEnv::Hallway(e) => e.num_actions(),
        }
    }

    fn reset(&mut self) -> Observation {
        match self {
            AnyEnv::DeepSea(e) => e.reset(),
            AnyEnv::Hallway(e) => e.reset(),
        }
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        match self {
            AnyEnv::DeepSea(e) => e.step(action),
            AnyEnv::Hallway(e) => e.step(action),
        }
    }

    fn is_done(&self) -> bool {
        match self {
            AnyEnv::DeepSea(e) => e.is_done(),
            AnyEnv::Hallway(e) => e.is_done(),
        }
    }

    fn horizon(&self) -> usize {
        match self {
            AnyEnv::DeepSea(e) => e.horizon(),
            AnyEnv::Hallway(e) => e.horizon(),
        }
    }
}

/// Outcome of one lane of a [`VecEnv`] step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VecStep {
    /// Observation to act on next; the reset observation when `done`.
    pub observation: Observation,
    /// The observation the transition actually led to (terminal when `done`).
    pub next_observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// `K` environments stepped in lockstep with automatic reset.
#[derive(Clone, Debug)]
pub struct VecEnv<E = AnyEnv> {
    envs: Vec<E>,
    observations: Vec<Observation>,
}

impl<E: Environment> VecEnv<E> {
    pub fn new(mut envs: Vec<E>) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::Usage("VecEnv needs at least one environment".into()));
        }
        let observations = envs.iter_mut().map(|e| e.reset()).collect();
        Ok(VecEnv { envs, observations })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    pub fn reset(&mut self) -> &[Observation] {
        for (env, obs) in self.envs.iter_mut().zip(self.observations.iter_mut()) {
            *obs = env.reset();
        }
        &self.observations
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<VecStep>> {
        check_dim("vectorized actions", self.envs.len(), actions.len())?;
        let mut out = Vec::with_capacity(actions.len());
        for ((env, obs), &action) in self.envs.iter_mut().zip(self.observations.iter_mut()).zip(actions) {
            let step = env.step(action)?;
            let next_observation = step.observation;
            if step.done {
                *obs = env.reset();
            } else {
                *obs = next_observation;
            }
            out.push(VecStep { observation: *obs, next_observation, reward: step.reward, done: step.done });
        }
        Ok(out)
    }
}

impl VecEnv<AnyEnv> {
    pub fn from_spec(spec: &EnvSpec, num_envs: usize) -> Result<Self> {
        let envs = (0..num_envs).map(|_| spec.build()).collect::<Result<Vec<_>>>()?;
        Self::new(envs)
    }
}

/// Exact optimal undiscounted episode return by backward induction over the
/// full environment state (position, time, stay counter, first-reach flag).
pub fn solve_optimal_return(spec: &EnvSpec) -> Result<f64> {
    let mut env = spec.build()?;
    env.reset();
    let mut memo = HashMap::new();
    optimal_value(&env, &mut memo)
}

fn optimal_value(env: &AnyEnv, memo: &mut HashMap<AnyEnv, f64>) -> Result<f64> {
    if env.is_done() {
        return Ok(0.0);
    }
    if let Some(&v) = memo.get(env) {
        return Ok(v);
    }
    let mut best = f64::NEG_INFINITY;
    for action in 0..env.num_actions() {
        let mut next = env.clone();
        let step = next.step(action)?;
        best = best.max(step.reward + optimal_value(&next, memo)?);
    }
    memo.insert(env.clone(), best);
    Ok(best)
}

/// Undiscounted return of a fixed action sequence from a fresh episode.
pub fn rollout_return<E: Environment>(env: &mut E, actions: &[usize]) -> Result<f64> {
    env.reset();
    let mut total = 0.0;
    for &a in actions {
        let step = env.step(a)?;
        total += step.reward;
        if step.done {
            break;
        }
    }
    Ok(total)
}
