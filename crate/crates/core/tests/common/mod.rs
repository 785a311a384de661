#![allow(dead_code)]

use nalgebra::DVector;
use treemax::mdp::random_mdp;
use treemax::variance::seeded_theta;
use treemax::{Mdp, RewardMode, TreePolicyConfig, Variant};

/// Random instance with scores in `[-1, 1]`; state-only rewards for E.
pub fn instance(
    seed: u64,
    states: usize,
    actions: usize,
    depth: usize,
    beta: f64,
    variant: Variant,
) -> (Mdp, TreePolicyConfig) {
    let rewards = match variant {
        Variant::Cumulative => RewardMode::StateAction,
        Variant::Exponentiated => RewardMode::State,
    };
    let (mdp, behavior) = random_mdp(states, actions, rewards, 0.9, seed).unwrap();
    let theta = seeded_theta(states, seed).map(|t| 2.0 * t - 1.0);
    let config = TreePolicyConfig::new(variant, depth, beta, theta, behavior).unwrap();
    (mdp, config)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
