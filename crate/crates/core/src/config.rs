//! Experiment configuration: per-task default tables, a flat sectioned
//! `key = value` document format, command-line overrides and sweeps.
//!
//! Resolution order is CLI override > document value > default for the
//! resolved `(env, algo, intrinsic)` triple.

use std::fmt;
use std::str::FromStr;

use toml::Value;

use crate::agents::{ActorCriticParams, Algo, DqnParams, PpoParams};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::intrinsic::{IntrinsicKind, IntrinsicParams};
use crate::nn::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvName {
    DeepSea,
    Hallway,
}

impl EnvName {
    pub const ALL: [EnvName; 2] = [EnvName::DeepSea, EnvName::Hallway];

    pub fn name(self) -> &'static str {
        match self {
            EnvName::DeepSea => "deepsea",
            EnvName::Hallway => "hallway",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EnvName::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown environment `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub name: EnvName,
    pub size: usize,
    pub left: usize,
    pub right: usize,
    pub map_seed: u64,
    pub num_envs: usize,
}

/// Hyperparameters of the baseline learner, or of the exploitation learner
/// for decoupled algorithms.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgoConfig {
    pub name: Algo,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub n_steps: usize,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    pub activation: Activation,
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip_value_loss: bool,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
}

/// The A2C exploration learner used by the decoupled algorithms.
#[derive(Clone, Debug, PartialEq)]
pub struct ExploreConfig {
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicConfig {
    pub name: IntrinsicKind,
    pub lambda: f64,
    pub count_increment: f64,
    pub intrinsic_lr: f64,
    pub forward_coef: f64,
    pub inverse_coef: f64,
    pub hash_k: usize,
    pub embed_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoupledConfig {
    pub t_dec: usize,
    pub alpha_beta: f64,
    pub alpha_e: f64,
    pub retrace: bool,
    pub pure_intrinsic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algo: AlgoConfig,
    pub explore: ExploreConfig,
    pub intrinsic: IntrinsicConfig,
    pub decoupled: DecoupledConfig,
    pub schedule: ScheduleConfig,
    pub gamma: f64,
    pub normalize_obs: bool,
    pub normalize_rewards: bool,
}

pub const DEFAULT_GAMMA: f64 = 0.99;

/// Table value by environment: `(deepsea, hallway)`.
fn by_env<T>(env: EnvName, deepsea: T, hallway: T) -> T {
    match env {
        EnvName::DeepSea => deepsea,
        EnvName::Hallway => hallway,
    }
}

impl ExperimentConfig {
    /// The best-identified configuration for one `(env, algo, intrinsic)` cell.
    pub fn defaults(env: EnvName, algo: Algo, intrinsic: IntrinsicKind) -> Self {
        use Activation::{Relu, Tanh};
        macro_rules! e {
            ($ds:expr, $hw:expr) => {
                by_env(env, $ds, $hw)
            };
        }

        // Exploration learner: the A2C baseline table.
        let explore = ExploreConfig {
            learning_rate: e!(1e-3, 3e-4),
            entropy_coef: 1e-4,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            adam_eps: 1e-3,
            activation: e!(Relu, Tanh),
        };

        let mut a = AlgoConfig {
            name: algo,
            learning_rate: e!(1e-3, 3e-4),
            entropy_coef: 1e-4,
            n_steps: 5,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            adam_eps: 1e-3,
            activation: e!(Relu, Tanh),
            clip_ratio: 0.1,
            epochs: 10,
            minibatches: 4,
            clip_value_loss: true,
            tau: e!(0.01, 0.001),
            batch_size: e!(256, 512),
            buffer_capacity: 100_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 10_000,
        };
        let mut retrace = false;
        let (mut normalize_obs, mut normalize_rewards) = (e!(true, false), e!(true, false));
        match algo {
            Algo::A2c => {}
            Algo::Ppo => {
                a.activation = e!(Tanh, Relu);
                a.entropy_coef = e!(1e-4, 7e-4);
                a.n_steps = 10;
                normalize_obs = false;
                normalize_rewards = false;
            }
            Algo::Dqn | Algo::DeDqn => {
                a.learning_rate = e!(1e-3, 1e-4);
                a.activation = e!(Tanh, Relu);
                a.entropy_coef = 0.0;
                if algo == Algo::Dqn {
                    normalize_obs = false;
                    normalize_rewards = false;
                }
            }
            Algo::DeA2c => {
                a.entropy_coef = e!(1e-6, 1e-5);
                retrace = e!(false, true);
            }
            Algo::DePpo => {
                a.activation = Relu;
                a.entropy_coef = e!(1e-4, 1e-6);
                a.n_steps = 10;
            }
        }

        let mut intr = IntrinsicConfig {
            name: intrinsic,
            lambda: 1.0,
            count_increment: 1.0,
            intrinsic_lr: 1e-5,
            forward_coef: 5.0,
            inverse_coef: 1.0,
            hash_k: 16,
            embed_dim: 16,
        };
        // (learning rate, forward coef, inverse coef) per intrinsic reward.
        let ppo_like = algo == Algo::Ppo;
        let (lr, fwd, inv) = match intrinsic {
            IntrinsicKind::Icm => match algo {
                Algo::Ppo | Algo::DePpo | Algo::DeDqn => e!((1e-5, 5.0, 1.0), (1e-5, 0.5, 10.0)),
                _ => e!((1e-5, 5.0, 1.0), (1e-6, 5.0, 0.5)),
            },
            IntrinsicKind::Rnd if ppo_like => e!((1e-7, 5.0, 1.0), (5e-7, 5.0, 1.0)),
            IntrinsicKind::Rnd => e!((1e-7, 5.0, 1.0), (1e-5, 5.0, 1.0)),
            IntrinsicKind::Ride if ppo_like => e!((5e-6, 10.0, 1.0), (1e-7, 1.0, 1.0)),
            IntrinsicKind::Ride => e!((1e-5, 0.5, 10.0), (1e-5, 10.0, 0.5)),
            _ => (intr.intrinsic_lr, intr.forward_coef, intr.inverse_coef),
        };
        intr.intrinsic_lr = lr;
        intr.forward_coef = fwd;
        intr.inverse_coef = inv;

        ExperimentConfig {
            env: EnvConfig { name: env, size: 10, left: 10, right: 0, map_seed: 0, num_envs: 4 },
            algo: a,
            explore,
            intrinsic: intr,
            decoupled: DecoupledConfig { t_dec: 1, alpha_beta: 0.0, alpha_e: 0.0, retrace, pure_intrinsic: false },
            schedule: ScheduleConfig {
                episodes: 100_000,
                eval_every: 1_000,
                eval_episodes: 8,
                seeds: vec![0, 1, 2, 3, 4],
            },
            gamma: DEFAULT_GAMMA,
            normalize_obs,
            normalize_rewards,
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        match self.env.name {
            EnvName::DeepSea => EnvSpec::DeepSea { size: self.env.size, map_seed: self.env.map_seed },
            EnvName::Hallway => EnvSpec::Hallway { left: self.env.left, right: self.env.right },
        }
    }

    /// `<algo>-<intrinsic>`, the cell label used in output paths.
    pub fn cell_name(&self) -> String {
        format!("{}-{}", self.algo.name, self.intrinsic.name)
    }

    /// Parameters of the acting (baseline) or exploitation actor-critic.
    pub fn actor_critic_params(&self) -> ActorCriticParams {
        ActorCriticParams {
            learning_rate: self.algo.learning_rate,
            entropy_coef: self.algo.entropy_coef,
            value_coef: self.algo.value_coef,
            max_grad_norm: self.algo.max_grad_norm,
            adam_eps: self.algo.adam_eps,
            activation: self.algo.activation,
        }
    }

    pub fn explore_params(&self) -> ActorCriticParams {
        ActorCriticParams {
            learning_rate: self.explore.learning_rate,
            entropy_coef: self.explore.entropy_coef,
            value_coef: self.explore.value_coef,
            max_grad_norm: self.explore.max_grad_norm,
            adam_eps: self.explore.adam_eps,
            activation: self.explore.activation,
        }
    }

    pub fn ppo_params(&self) -> PpoParams {
        PpoParams {
            clip_ratio: self.algo.clip_ratio,
            epochs: self.algo.epochs,
            minibatches: self.algo.minibatches,
            clip_value_loss: self.algo.clip_value_loss,
        }
    }

    pub fn dqn_params(&self) -> DqnParams {
        DqnParams {
            learning_rate: self.algo.learning_rate,
            adam_eps: self.algo.adam_eps,
            max_grad_norm: self.algo.max_grad_norm,
            tau: self.algo.tau,
            batch_size: self.algo.batch_size,
            activation: self.algo.activation,
        }
    }

    pub fn intrinsic_params(&self) -> IntrinsicParams {
        IntrinsicParams {
            count_increment: self.intrinsic.count_increment,
            learning_rate: self.intrinsic.intrinsic_lr,
            forward_coef: self.intrinsic.forward_coef,
            inverse_coef: self.intrinsic.inverse_coef,
            hash_bits: self.intrinsic.hash_k,
            embed_dim: self.intrinsic.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        check((0.0..1.0).contains(&self.gamma), "gamma", "must lie in [0, 1)")?;
        check(self.env.size >= 1, "env.size", "must be positive")?;
        check(self.env.left >= 1, "env.left", "must be positive")?;
        check(self.env.num_envs >= 1, "env.num_envs", "must be positive")?;
        check(positive(self.algo.learning_rate), "algo.learning_rate", "must be positive")?;
        check(nonneg(self.algo.entropy_coef), "algo.entropy_coef", "must be nonnegative")?;
        check(self.algo.n_steps >= 1, "algo.n_steps", "must be positive")?;
        check(nonneg(self.algo.value_coef), "algo.value_coef", "must be nonnegative")?;
        check(positive(self.algo.max_grad_norm), "algo.max_grad_norm", "must be positive")?;
        check(positive(self.algo.adam_eps), "algo.adam_eps", "must be positive")?;
        check(positive(self.algo.clip_ratio), "algo.clip_ratio", "must be positive")?;
        check(self.algo.epochs >= 1, "algo.epochs", "must be positive")?;
        check(self.algo.minibatches >= 1, "algo.minibatches", "must be positive")?;
        check(self.algo.tau > 0.0 && self.algo.tau <= 1.0, "algo.tau", "must lie in (0, 1]")?;
        check(self.algo.batch_size >= 1, "algo.batch_size", "must be positive")?;
        check(self.algo.buffer_capacity >= 1, "algo.buffer_capacity", "must be positive")?;
        check((0.0..=1.0).contains(&self.algo.epsilon_start), "algo.epsilon_start", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.algo.epsilon_end), "algo.epsilon_end", "must lie in [0, 1]")?;
        check(positive(self.explore.learning_rate), "explore.learning_rate", "must be positive")?;
        check(nonneg(self.explore.entropy_coef), "explore.entropy_coef", "must be nonnegative")?;
        check(nonneg(self.explore.value_coef), "explore.value_coef", "must be nonnegative")?;
        check(positive(self.explore.max_grad_norm), "explore.max_grad_norm", "must be positive")?;
        check(positive(self.explore.adam_eps), "explore.adam_eps", "must be positive")?;
        check(nonneg(self.intrinsic.lambda), "intrinsic.lambda", "must be nonnegative")?;
        check(positive(self.intrinsic.count_increment), "intrinsic.count_increment", "must be positive")?;
        check(positive(self.intrinsic.intrinsic_lr), "intrinsic.intrinsic_lr", "must be positive")?;
        check(nonneg(self.intrinsic.forward_coef), "intrinsic.forward_coef", "must be nonnegative")?;
        check(nonneg(self.intrinsic.inverse_coef), "intrinsic.inverse_coef", "must be nonnegative")?;
        check((1..=128).contains(&self.intrinsic.hash_k), "intrinsic.hash_k", "must lie in 1..=128")?;
        check(self.intrinsic.embed_dim >= 1, "intrinsic.embed_dim", "must be positive")?;
        check(self.decoupled.t_dec >= 1, "decoupled.t_dec", "must be positive")?;
        check(nonneg(self.decoupled.alpha_beta), "decoupled.alpha_beta", "must be nonnegative")?;
        check(nonneg(self.decoupled.alpha_e), "decoupled.alpha_e", "must be nonnegative")?;
        check(
            !self.decoupled.pure_intrinsic || self.algo.name.is_decoupled(),
            "decoupled.pure_intrinsic",
            "only applies to decoupled algorithms",
        )?;
        check(self.schedule.eval_every >= 1, "schedule.eval_every", "must be positive")?;
        check(self.schedule.eval_episodes >= 1, "schedule.eval_episodes", "must be positive")?;
        check(!self.schedule.seeds.is_empty(), "schedule.seeds", "must list at least one seed")?;
        Ok(())
    }
}

/// Conversion between config fields and document values.
trait ConfigValue: Sized {
    fn to_value(&self) -> Value;
    fn from_value(key: &str, v: &Value) -> Result<Self>;
}

fn type_error(key: &str, expected: &str, v: &Value) -> Error {
    Error::config(key, format!("expected {expected}, got `{v}`"))
}

impl ConfigValue for f64 {
    fn to_value(&self) -> Value {
        Value::Float(*self)
    }

    fn from_value(key: &str, v: &Value) -> Result<Self> {
        match v {
            Value::Float(x) => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(type_error(key, "a number", v)),
        }
    }
}

impl ConfigValue for usize {
    fn to_value(&self) -> Value {
        Value::Integer(*self as i64)
    }

    fn from_value(key: &str, v: &Value) -> Result<Self> {
        match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(type_error(key, "a nonnegative integer", v)),
        }
    }
}

impl ConfigValue for u64 {
    fn to_value(&self) -> Value {
        Value::Integer(*self as i64)
    }

    fn from_value(key: &str, v: &Value) -> Result<Self> {
        usize::from_value(key, v).map(|x| x as u64)
    }
}

impl ConfigValue for bool {
    fn to_value(&self) -> Value {
        Value::Boolean(*self)
    }

    fn from_value(key: &str, v: &Value) -> Result<Self> {
        v.as_bool().ok_or_else(|| type_error(key, "true or false", v))
    }
}

impl ConfigValue for Vec<u64> {
    fn to_value(&self) -> Value {
        Value::Array(self.iter().map(ConfigValue::to_value).collect())
    }

    fn from_value(key: &str, v: &Value) -> Result<Self> {
        match v {
            Value::Array(items) => items.iter().map(|i| u64::from_value(key, i)).collect(),
            Value::Integer(_) => Ok(vec![u64::from_value(key, v)?]),
            _ => Err(type_error(key, "a list of integers", v)),
        }
    }
}

macro_rules! named_value {
    ($($ty:ty),*) => {$(
        impl ConfigValue for $ty {
            fn to_value(&self) -> Value {
                Value::String(self.name().to_string())
            }

            fn from_value(key: &str, v: &Value) -> Result<Self> {
                let s = v.as_str().ok_or_else(|| type_error(key, "a string", v))?;
                s.parse().map_err(|e: String| Error::config(key, e))
            }
        }
    )*};
}

named_value!(EnvName, Algo, IntrinsicKind);

impl ConfigValue for Activation {
    fn to_value(&self) -> Value {
        Value::String(self.name().to_string())
    }

    fn from_value(key: &str, v: &Value) -> Result<Self> {
        let s = v.as_str().ok_or_else(|| type_error(key, "a string", v))?;
        Activation::from_name(s).ok_or_else(|| Error::config(key, format!("unknown activation `{s}`")))
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every recognised key, in canonical order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl ExperimentConfig {
            pub fn get(&self, key: &str) -> Option<Value> {
                match key {
                    $($key => Some(self.$($field).+.to_value()),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, key: &str, value: &Value) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::from_value(key, value)?;
                        Ok(())
                    })*
                    _ => Err(Error::config(key, "unknown key")),
                }
            }
        }
    };
}

config_keys! {
    "gamma" => gamma;
    "normalize_obs" => normalize_obs;
    "normalize_rewards" => normalize_rewards;
    "env.name" => env.name;
    "env.size" => env.size;
    "env.left" => env.left;
    "env.right" => env.right;
    "env.map_seed" => env.map_seed;
    "env.num_envs" => env.num_envs;
    "algo.name" => algo.name;
    "algo.learning_rate" => algo.learning_rate;
    "algo.entropy_coef" => algo.entropy_coef;
    "algo.n_steps" => algo.n_steps;
    "algo.value_coef" => algo.value_coef;
    "algo.max_grad_norm" => algo.max_grad_norm;
    "algo.adam_eps" => algo.adam_eps;
    "algo.activation" => algo.activation;
    "algo.clip_ratio" => algo.clip_ratio;
    "algo.epochs" => algo.epochs;
    "algo.minibatches" => algo.minibatches;
    "algo.clip_value_loss" => algo.clip_value_loss;
    "algo.tau" => algo.tau;
    "algo.batch_size" => algo.batch_size;
    "algo.buffer_capacity" => algo.buffer_capacity;
    "algo.epsilon_start" => algo.epsilon_start;
    "algo.epsilon_end" => algo.epsilon_end;
    "algo.epsilon_decay_episodes" => algo.epsilon_decay_episodes;
    "explore.learning_rate" => explore.learning_rate;
    "explore.entropy_coef" => explore.entropy_coef;
    "explore.value_coef" => explore.value_coef;
    "explore.max_grad_norm" => explore.max_grad_norm;
    "explore.adam_eps" => explore.adam_eps;
    "explore.activation" => explore.activation;
    "intrinsic.name" => intrinsic.name;
    "intrinsic.lambda" => intrinsic.lambda;
    "intrinsic.count_increment" => intrinsic.count_increment;
    "intrinsic.intrinsic_lr" => intrinsic.intrinsic_lr;
    "intrinsic.forward_coef" => intrinsic.forward_coef;
    "intrinsic.inverse_coef" => intrinsic.inverse_coef;
    "intrinsic.hash_k" => intrinsic.hash_k;
    "intrinsic.embed_dim" => intrinsic.embed_dim;
    "decoupled.t_dec" => decoupled.t_dec;
    "decoupled.alpha_beta" => decoupled.alpha_beta;
    "decoupled.alpha_e" => decoupled.alpha_e;
    "decoupled.retrace" => decoupled.retrace;
    "decoupled.pure_intrinsic" => decoupled.pure_intrinsic;
    "schedule.episodes" => schedule.episodes;
    "schedule.eval_every" => schedule.eval_every;
    "schedule.eval_episodes" => schedule.eval_episodes;
    "schedule.seeds" => schedule.seeds;
}

/// Run metadata carried in a `[meta]` section; ignored when resolving.
pub const META_KEYS: &[&str] = &["meta.seed", "meta.version", "meta.optimal_return", "meta.sweep"];

/// Expands a short key (`algo`, `size`, `lambda`, ...) to its canonical form.
pub fn canonical_key(key: &str) -> Result<String> {
    if KEYS.contains(&key) || META_KEYS.contains(&key) {
        return Ok(key.to_string());
    }
    if matches!(key, "env" | "algo" | "intrinsic") {
        return Ok(format!("{key}.name"));
    }
    let matches: Vec<&&str> = KEYS.iter().filter(|k| k.rsplit('.').next() == Some(key)).collect();
    match matches.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(Error::config(key, "unknown key")),
        many => Err(Error::config(
            key,
            format!("ambiguous, use one of {}", many.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ")),
        )),
    }
}

/// Parses a flat sectioned document into `(canonical key, value)` pairs.
pub fn parse_document(text: &str) -> Result<Vec<(String, Value)>> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let mut out = Vec::new();
    for (k, v) in table {
        match v {
            Value::Table(inner) => {
                for (k2, v2) in inner {
                    if v2.is_table() {
                        return Err(Error::config(format!("{k}.{k2}"), "nested sections are not supported"));
                    }
                    let key = format!("{k}.{k2}");
                    if !KEYS.contains(&key.as_str()) && !META_KEYS.contains(&key.as_str()) {
                        return Err(Error::config(key, "unknown key"));
                    }
                    out.push((key, v2));
                }
            }
            v => {
                if !KEYS.contains(&k.as_str()) {
                    return Err(Error::config(k, "unknown key"));
                }
                out.push((k, v));
            }
        }
    }
    Ok(out)
}

/// Parses one `key=value` override; bare words become strings.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{text}` is not of the form key=value")))?;
    let key = canonical_key(key.trim())?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn lookup<'a>(entries: &'a [(String, Value)], overrides: &'a [(String, Value)], key: &str) -> Option<&'a Value> {
    overrides.iter().chain(entries).rev().find(|(k, _)| k == key).map(|(_, v)| v)
}

/// Resolves a document plus overrides against the default tables.
pub fn parse_config(document: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let entries = parse_document(document)?;
    let overrides = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
    // Overrides come after document entries, so the last match wins.
    let all: Vec<(String, Value)> = entries.iter().chain(overrides.iter()).cloned().collect();
    let name = |key: &str| lookup(&all, &[], key);

    let env = match name("env.name") {
        Some(v) => EnvName::from_value("env.name", v)?,
        None => EnvName::DeepSea,
    };
    let algo = match name("algo.name") {
        Some(v) => Algo::from_value("algo.name", v)?,
        None => Algo::A2c,
    };
    let intrinsic = match name("intrinsic.name") {
        Some(v) => IntrinsicKind::from_value("intrinsic.name", v)?,
        None => IntrinsicKind::None,
    };

    let mut config = ExperimentConfig::defaults(env, algo, intrinsic);
    for (k, v) in &all {
        if META_KEYS.contains(&k.as_str()) {
            continue;
        }
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

/// Run metadata written next to the config snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub version: String,
    pub optimal_return: f64,
    pub sweep: Option<String>,
}

/// Canonical document listing every key; `parse_config` reads it back to an
/// identical config.
pub fn to_document(config: &ExperimentConfig, meta: Option<&RunMeta>) -> String {
    let mut root = toml::Table::new();
    for key in KEYS {
        let value = config.get(key).expect("every listed key has a getter");
        match key.split_once('.') {
            Some((section, field)) => {
                root.entry(section.to_string())
                    .or_insert_with(|| Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("sections are tables")
                    .insert(field.to_string(), value);
            }
            None => {
                root.insert(key.to_string(), value);
            }
        }
    }
    if let Some(meta) = meta {
        let mut t = toml::Table::new();
        t.insert("seed".into(), meta.seed.to_value());
        t.insert("version".into(), Value::String(meta.version.clone()));
        t.insert("optimal_return".into(), Value::Float(meta.optimal_return));
        if let Some(s) = &meta.sweep {
            t.insert("sweep".into(), Value::String(s.clone()));
        }
        root.insert("meta".into(), Value::Table(t));
    }
    root.to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Lambda,
    Decay,
}

impl FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(SweepKind::Lambda),
            "decay" => Ok(SweepKind::Decay),
            _ => Err(format!("unknown sweep kind `{s}` (expected lambda or decay)")),
        }
    }
}

pub const LAMBDA_SWEEP: [f64; 9] = [0.01, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0, 100.0];
pub const COUNT_INCREMENT_SWEEP: [f64; 7] = [0.01, 0.1, 0.2, 1.0, 5.0, 10.0, 100.0];
pub const LEARNING_RATE_SWEEP: [f64; 9] = [1e-9, 1e-8, 2e-8, 1e-7, 5e-7, 1e-6, 1e-5, 1e-4, 1e-3];

/// One point of a sensitivity sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    /// `<key>=<value>`, also the output subdirectory.
    pub label: String,
    pub key: &'static str,
    pub value: f64,
    pub config: ExperimentConfig,
}

pub fn generate_sweep(kind: SweepKind, base: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let (key, values): (&'static str, &[f64]) = match kind {
        SweepKind::Lambda => ("intrinsic.lambda", &LAMBDA_SWEEP),
        SweepKind::Decay if base.intrinsic.name.is_count_based() => {
            ("intrinsic.count_increment", &COUNT_INCREMENT_SWEEP)
        }
        SweepKind::Decay if base.intrinsic.name.is_prediction_based() => {
            ("intrinsic.intrinsic_lr", &LEARNING_RATE_SWEEP)
        }
        SweepKind::Decay => {
            return Err(Error::Usage("a decay sweep needs an intrinsic reward other than `none`".into()))
        }
    };
    values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            config.set(key, &Value::Float(value))?;
            config.validate()?;
            let short = key.rsplit('.').next().unwrap();
            Ok(SweepPoint { label: format!("{short}={value}"), key, value, config })
        })
        .collect()
}
