//! Reduction and hand-computed oracles for the decoupled trainers.

mod common;

use common::{rng, transition};
use derl::agents::{
    ActorCritic, ActorCriticParams, Algo, DqnParams, Experience, PpoParams, QLearner, ReplayBuffer, RolloutBatch,
    Transition,
};
use derl::config::{EnvName, ExperimentConfig};
use derl::decoupled::{
    dea2c_exploit_update, dedqn_exploit_update, deppo_exploit_update, exploration_update, DecoupledState,
    ExploitLearner, ExploitSettings,
};
use derl::envs::Observation;
use derl::harness::Learner;
use derl::intrinsic::IntrinsicKind;
use derl::nn::Activation;

const DIM: usize = 6;
const GAMMA: f64 = 0.99;

fn params(entropy_coef: f64) -> ActorCriticParams {
    ActorCriticParams {
        learning_rate: 1e-3,
        entropy_coef,
        value_coef: 0.5,
        max_grad_norm: 0.5,
        adam_eps: 1e-3,
        activation: Activation::Relu,
    }
}

fn flat(ac: &ActorCritic) -> Vec<f64> {
    let mut p = ac.policy.parameters();
    p.extend(ac.value.parameters());
    p
}

fn delta(before: &[f64], after: &[f64]) -> Vec<f64> {
    after.iter().zip(before).map(|(a, b)| a - b).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Lane `i` moves from state `i` to `i + 1`; the last lane terminates.
fn lanes(probs: impl Fn(usize) -> Vec<f64>) -> Vec<Transition> {
    (0..4)
        .map(|i| {
            let reward = [0.3, -0.2, 0.0, 1.0][i];
            transition(Observation::one_hot(i, DIM), i % 2, reward, Observation::one_hot(i + 1, DIM), i == 3, probs(i))
        })
        .collect()
}

fn settings(alpha_e: f64) -> ExploitSettings {
    ExploitSettings { gamma: GAMMA, retrace: false, alpha_e }
}

#[test]
fn unit_weights_reduce_to_a2c() {
    let ac = ActorCritic::new(DIM, 2, params(0.01), &mut rng(1)).unwrap();
    // Behavior probabilities taken from π_e itself make every ρ exactly 1.
    let staged = lanes(|i| ac.distribution(&Observation::one_hot(i, DIM).to_vec()).unwrap().probs().to_vec());

    let bootstrap: Vec<f64> = staged.iter().map(|t| ac.state_value(&t.next_obs.to_vec()).unwrap()).collect();
    let batch = RolloutBatch::new(vec![staged.clone()], bootstrap).unwrap();
    let mut a2c = ac.clone();
    a2c.a2c_update(&batch, GAMMA, None).unwrap();

    let mut dea2c = ac.clone();
    let (_, diag) = dea2c_exploit_update(&mut dea2c, &staged, &settings(0.0)).unwrap();
    assert_eq!(diag.mean_rho(), 1.0);
    assert_eq!(diag.rho_max, 1.0);

    let worst = flat(&a2c).iter().zip(flat(&dea2c)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst < 1e-12, "max parameter delta {worst}");
}

#[test]
fn zero_advantages_leave_the_policy_untouched() {
    let mut ac = ActorCritic::new(DIM, 2, params(0.0), &mut rng(2)).unwrap();
    // Terminal transitions whose reward equals V(s) have zero advantage and
    // zero value error.
    let staged: Vec<Transition> = (0..4)
        .map(|i| {
            let s = Observation::one_hot(i, DIM);
            let v = ac.state_value(&s.to_vec()).unwrap();
            transition(s, i % 2, v, Observation::one_hot(5, DIM), true, vec![0.3, 0.7])
        })
        .collect();
    let before = flat(&ac);
    dea2c_exploit_update(&mut ac, &staged, &settings(0.0)).unwrap();
    assert_eq!(flat(&ac), before);
}

#[test]
fn deppo_single_epoch_without_clipping_follows_dea2c() {
    let ac = ActorCritic::new(DIM, 2, params(0.0), &mut rng(3)).unwrap();
    let staged = lanes(|i| if i % 2 == 0 { vec![0.8, 0.2] } else { vec![0.35, 0.65] });
    let before = flat(&ac);

    let mut a = ac.clone();
    dea2c_exploit_update(&mut a, &staged, &settings(0.0)).unwrap();
    let mut p = ac.clone();
    let ppo = PpoParams { clip_ratio: 1e12, epochs: 1, minibatches: 1, clip_value_loss: false };
    let (_, diag) = deppo_exploit_update(&mut p, &staged, &settings(0.0), &ppo, &mut rng(4)).unwrap();
    assert!((diag.mean_rho() - 1.0).abs() > 1e-3, "weights should differ from 1");

    let c = cosine(&delta(&before, &flat(&a)), &delta(&before, &flat(&p)));
    assert!(c > 0.99, "cosine {c}");
}

#[test]
fn ppo_without_clipping_follows_a2c() {
    let ac = ActorCritic::new(DIM, 2, params(0.01), &mut rng(5)).unwrap();
    let steps: Vec<Vec<Transition>> = (0..3)
        .map(|t| {
            (0..2)
                .map(|lane| {
                    let s = t + lane;
                    transition(Observation::one_hot(s, DIM), (t + lane) % 2, 0.1 * t as f64, Observation::one_hot(s + 1, DIM), false, vec![0.5, 0.5])
                })
                .collect()
        })
        .collect();
    let batch = RolloutBatch::new(steps, vec![0.2, -0.1]).unwrap();
    let before = flat(&ac);
    let mut a = ac.clone();
    a.a2c_update(&batch, GAMMA, None).unwrap();
    let mut p = ac.clone();
    let ppo = PpoParams { clip_ratio: 1e12, epochs: 1, minibatches: 1, clip_value_loss: false };
    p.ppo_update(&batch, GAMMA, &ppo, &mut rng(6)).unwrap();
    let c = cosine(&delta(&before, &flat(&a)), &delta(&before, &flat(&p)));
    assert!(c > 0.999, "cosine {c}");
}

#[test]
fn exploration_kl_anchor_at_own_policy_changes_nothing() {
    let ac = ActorCritic::new(DIM, 2, params(0.01), &mut rng(7)).unwrap();
    let staged = lanes(|_| vec![0.5, 0.5]);
    let batch = RolloutBatch::new(vec![staged.clone()], vec![0.0; 4]).unwrap();
    let anchors: Vec<Vec<f64>> =
        staged.iter().map(|t| ac.distribution(&t.input).unwrap().probs().to_vec()).collect();
    let mut plain = ac.clone();
    exploration_update(&mut plain, &batch, GAMMA, 0.0, None).unwrap();
    let mut anchored = ac.clone();
    exploration_update(&mut anchored, &batch, GAMMA, 0.1, Some(&anchors)).unwrap();
    let worst = flat(&plain).iter().zip(flat(&anchored)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst < 1e-12, "{worst}");
}

fn dqn_params(batch_size: usize) -> DqnParams {
    DqnParams { learning_rate: 1e-2, adam_eps: 1e-3, max_grad_norm: 10.0, tau: 0.5, batch_size, activation: Activation::Tanh }
}

fn experience(s: usize, action: usize, reward: f64, next: usize, done: bool) -> Experience {
    Experience { obs: Observation::one_hot(s, DIM), action, reward, next_obs: Observation::one_hot(next, DIM), done }
}

#[test]
fn double_dqn_targets_match_hand_computation() {
    let mut q = QLearner::new(DIM, 3, dqn_params(3), &mut rng(8)).unwrap();
    // A few updates pull the online and target networks apart.
    let warmup = vec![experience(0, 0, 1.0, 1, false), experience(1, 2, -1.0, 2, false), experience(2, 1, 0.5, 3, true)];
    for _ in 0..5 {
        q.update_on(&warmup, GAMMA).unwrap();
    }
    assert_ne!(q.online.parameters(), q.target.parameters());

    let buffer = vec![experience(3, 1, 0.25, 4, false), experience(4, 0, -0.5, 5, false), experience(5, 2, 2.0, 0, true)];
    let mut expected = Vec::new();
    for e in &buffer {
        if e.done {
            expected.push(e.reward);
            continue;
        }
        let next = e.next_obs.to_vec();
        let online = q.online.forward(&next).unwrap();
        let mut best = 0;
        for a in 1..online.len() {
            if online[a] > online[best] {
                best = a;
            }
        }
        expected.push(e.reward + GAMMA * q.target.forward(&next).unwrap()[best]);
    }
    assert_eq!(q.double_dqn_targets(&buffer, GAMMA).unwrap(), expected);
}

#[test]
fn dedqn_update_delegates_to_dqn_update() {
    let q = QLearner::new(DIM, 3, dqn_params(4), &mut rng(9)).unwrap();
    let mut buffer = ReplayBuffer::new(16);
    for i in 0..10 {
        buffer.push(experience(i % DIM, i % 3, 0.1 * i as f64, (i + 1) % DIM, i % 4 == 3));
    }
    let mut direct = q.clone();
    direct.dqn_update(&buffer, GAMMA, &mut rng(10)).unwrap().unwrap();
    let mut via = q.clone();
    let len = buffer.len();
    dedqn_exploit_update(&mut via, &buffer, GAMMA, &mut rng(10)).unwrap().unwrap();
    assert_eq!(buffer.len(), len);
    assert_eq!(direct.online.parameters(), via.online.parameters());
    assert_eq!(direct.target.parameters(), via.target.parameters());
}

#[test]
fn dedqn_on_empty_buffer_is_a_no_op() {
    let mut q = QLearner::new(DIM, 3, dqn_params(4), &mut rng(11)).unwrap();
    let before = q.online.parameters();
    let out = dedqn_exploit_update(&mut q, &ReplayBuffer::new(8), GAMMA, &mut rng(12)).unwrap();
    assert!(out.is_none());
    assert_eq!(q.online.parameters(), before);
}

fn decoupled(algo: Algo, t_dec: usize) -> DecoupledState {
    let mut config = ExperimentConfig::defaults(EnvName::DeepSea, algo, IntrinsicKind::Count);
    config.env.size = 3;
    config.decoupled.t_dec = t_dec;
    if algo == Algo::DeDqn {
        config.algo.batch_size = 4;
    }
    DecoupledState::new(&config, &mut rng(13)).unwrap()
}

fn block() -> RolloutBatch {
    let steps = (0..2)
        .map(|t| {
            (0..4)
                .map(|lane| {
                    let s = (t * 3 + lane) % 9;
                    let mut tr = transition(Observation::one_hot(s, 9), lane % 2, 0.0, Observation::one_hot((s + 3) % 9, 9), false, vec![0.5, 0.5]);
                    tr.reward_train = 0.5;
                    tr
                })
                .collect()
        })
        .collect();
    RolloutBatch::new(steps, vec![0.0; 4]).unwrap()
}

#[test]
fn staging_store_is_cleared_after_each_exploitation_update() {
    for algo in [Algo::DeA2c, Algo::DePpo] {
        let mut state = decoupled(algo, 2);
        state.learn(block(), GAMMA, &mut rng(14)).unwrap();
        assert_eq!(state.staged.len(), 8, "{algo}: one block staged before the tick");
        state.learn(block(), GAMMA, &mut rng(14)).unwrap();
        assert!(state.staged.is_empty(), "{algo}");
        assert_eq!(state.ticks(), 2);

        let mut every = decoupled(algo, 1);
        every.learn(block(), GAMMA, &mut rng(15)).unwrap();
        assert!(every.staged.is_empty(), "{algo}");
    }
}

#[test]
fn replay_buffer_persists_across_dedqn_updates() {
    let mut state = decoupled(Algo::DeDqn, 1);
    for k in 1..=3 {
        state.learn(block(), GAMMA, &mut rng(16)).unwrap();
        let ExploitLearner::Dqn { buffer, .. } = &state.exploit else { panic!("expected a Q learner") };
        assert_eq!(buffer.len(), 8 * k);
        // Only extrinsic rewards reach the replay buffer.
        assert!(buffer.iter().all(|e| e.reward == 0.0));
    }
    let len = |s: &DecoupledState| match &s.exploit {
        ExploitLearner::Dqn { buffer, .. } => buffer.len(),
        _ => unreachable!(),
    };
    let before = len(&state);
    state.exploit_update(&mut rng(17)).unwrap();
    assert_eq!(len(&state), before);
}

#[test]
fn staged_transitions_keep_extrinsic_rewards() {
    let mut state = decoupled(Algo::DeA2c, 2);
    state.learn(block(), GAMMA, &mut rng(18)).unwrap();
    assert!(state.staged.iter().all(|t| t.reward_ext == 0.0 && t.reward_train == 0.5));
}
