//! Double-DQN on one-hot states converges to the value-iteration `Q*`.

mod common;

use derl::agents::{DqnParams, Experience, QLearner};
use derl::envs::Observation;
use derl::nn::Activation;

const STATES: usize = 5;
const ACTIONS: usize = 2;
const GAMMA: f64 = 0.9;

/// Deterministic chain: action 1 moves right at a small cost, action 0 moves
/// left for free, and stepping right from the last state ends the episode
/// with reward 1.
fn step(s: usize, a: usize) -> (usize, f64, bool) {
    match a {
        1 if s + 1 == STATES => (s, 1.0, true),
        1 => (s + 1, -0.05, false),
        _ => (s.saturating_sub(1), 0.0, false),
    }
}

fn value_iteration() -> Vec<[f64; ACTIONS]> {
    let mut q = vec![[0.0f64; ACTIONS]; STATES];
    for _ in 0..1000 {
        let v: Vec<f64> = q.iter().map(|row| row[0].max(row[1])).collect();
        for (s, row) in q.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                let (next, r, done) = step(s, a);
                *cell = r + if done { 0.0 } else { GAMMA * v[next] };
            }
        }
    }
    q
}

#[test]
fn converges_to_value_iteration_q_star() {
    let q_star = value_iteration();
    let batch: Vec<Experience> = (0..STATES)
        .flat_map(|s| {
            (0..ACTIONS).map(move |a| {
                let (next, reward, done) = step(s, a);
                Experience {
                    obs: Observation::one_hot(s, STATES),
                    action: a,
                    reward,
                    next_obs: Observation::one_hot(next, STATES),
                    done,
                }
            })
        })
        .collect();
    let params = DqnParams {
        learning_rate: 1e-3,
        adam_eps: 1e-8,
        max_grad_norm: 10.0,
        tau: 0.05,
        batch_size: batch.len(),
        activation: Activation::Tanh,
    };
    let mut q = QLearner::new(STATES, ACTIONS, params, &mut common::rng(1)).unwrap();
    for _ in 0..6000 {
        q.update_on(&batch, GAMMA).unwrap();
    }
    let mut worst: f64 = 0.0;
    for (s, row) in q_star.iter().enumerate() {
        let learned = q.q_values(&Observation::one_hot(s, STATES).to_vec()).unwrap();
        for a in 0..ACTIONS {
            worst = worst.max((learned[a] - row[a]).abs());
        }
        let greedy = q.greedy_action(&Observation::one_hot(s, STATES).to_vec()).unwrap();
        assert_eq!(greedy, 1, "state {s}");
    }
    assert!(worst < 1e-2, "max |Q - Q*| = {worst}");
}
