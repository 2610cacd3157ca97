#![allow(dead_code)]

use derl::agents::Transition;
use derl::envs::Observation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gradients smaller than this are below what a central difference with
/// `FD_STEP` resolves on O(1) losses (roundoff ~ 1e-16 / 1e-5).
pub const FD_RESOLUTION: f64 = 1e-7;
/// Absolute agreement required on unresolvable coordinates.
pub const FD_ABS_TOLERANCE: f64 = 1e-9;
/// Minimum number of coordinates checked by relative error.
pub const FD_MIN_COORDS: usize = 100;

/// `|a − n| / max(|a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Central-difference check of `analytic` against `loss` on the listed
/// coordinates; `coord` returns the parameter cell to perturb. Returns the
/// worst relative error over resolvable coordinates and panics if fewer
/// than `FD_MIN_COORDS` of them were checked or if a tiny gradient misses
/// by more than `FD_ABS_TOLERANCE`.
pub fn max_fd_error<M: Clone>(
    model: &M,
    analytic: &[f64],
    coords: &[usize],
    coord: impl Fn(&mut M, usize) -> &mut f64,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut resolved = 0;
    for &i in coords {
        let mut plus = model.clone();
        *coord(&mut plus, i) += FD_STEP;
        let mut minus = model.clone();
        *coord(&mut minus, i) -= FD_STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        if analytic[i].abs().max(numeric.abs()) < FD_RESOLUTION {
            let miss = (analytic[i] - numeric).abs();
            assert!(miss < FD_ABS_TOLERANCE, "coordinate {i}: analytic {} numeric {numeric}", analytic[i]);
        } else {
            resolved += 1;
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    assert!(resolved >= FD_MIN_COORDS.min(coords.len()), "only {resolved} resolvable coordinates");
    worst
}

/// Evenly spread coordinates covering every tensor of a flat vector.
pub fn spread(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len);
    (0..count).map(|k| k * len / count).collect()
}

pub fn transition(obs: Observation, action: usize, reward: f64, next: Observation, done: bool, probs: Vec<f64>) -> Transition {
    Transition {
        obs,
        input: obs.to_vec(),
        action,
        reward_ext: reward,
        reward_train: reward,
        next_obs: next,
        done,
        behavior_prob: probs[action],
        behavior_probs: probs,
    }
}
