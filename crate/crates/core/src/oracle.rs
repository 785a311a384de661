//! Brute-force reference computations: exhaustive trajectory enumeration
//! and Monte-Carlo estimators. Slow by design; used to cross-check the
//! closed forms in [`crate::policy`] and [`crate::variance`].

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TreeMaxError};
use crate::linalg::softmax;
use crate::mdp::{induce_chain, solve_q, stationary_distribution, Mdp, StationaryPolicy};
use crate::policy::{TreeModel, TreePolicyConfig, Variant};

/// One depth-`d` trajectory below a fixed root action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub probability: f64,
    /// `sum_{t<d} gamma^t r(s_t, a_t)`, root reward included.
    pub discounted_reward: f64,
    /// `sum_{1<=t<d} gamma^t r(s_t, a_t)`, root reward excluded.
    pub inner_reward: f64,
    pub leaf: usize,
}

/// Every trajectory `s, a, s_1, a_1, ..., s_d` with `a_t ~ pi_b` for `t >= 1`.
/// Zero-probability branches are skipped.
pub fn enumerate_trajectories(
    mdp: &Mdp,
    behavior: &StationaryPolicy,
    root: usize,
    action: usize,
    depth: usize,
) -> Vec<Trajectory> {
    let gamma = mdp.discount();
    let mut out = Vec::new();
    let r0 = mdp.reward(root, action);
    for next in 0..mdp.num_states() {
        let p = mdp.prob(root, action, next);
        if p > 0.0 {
            walk(mdp, behavior, next, 1, depth, gamma, p, r0, 0.0, &mut out);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn walk(
    mdp: &Mdp,
    behavior: &StationaryPolicy,
    state: usize,
    t: usize,
    depth: usize,
    gamma: f64,
    prob: f64,
    total: f64,
    inner: f64,
    out: &mut Vec<Trajectory>,
) {
    if t == depth {
        out.push(Trajectory {
            probability: prob,
            discounted_reward: total,
            inner_reward: inner,
            leaf: state,
        });
        return;
    }
    let g = gamma.powi(t as i32);
    for a in 0..mdp.num_actions() {
        let pa = behavior.prob(state, a);
        if pa == 0.0 {
            continue;
        }
        let r = g * mdp.reward(state, a);
        for next in 0..mdp.num_states() {
            let p = mdp.prob(state, a, next);
            if p > 0.0 {
                walk(mdp, behavior, next, t + 1, depth, gamma, prob * pa * p, total + r, inner + r, out);
            }
        }
    }
}

/// Expected discounted reward of the first `d` steps, per root action.
pub fn enumerated_cumulant(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> DVector<f64> {
    DVector::from_fn(mdp.num_actions(), |a, _| {
        enumerate_trajectories(mdp, &config.behavior, root, a, config.depth)
            .iter()
            .map(|t| t.probability * t.discounted_reward)
            .sum()
    })
}

/// `E[exp(beta sum_{1<=t<d} gamma^t r(s_t)) 1{s_d = s'}]`, an `A x S` matrix.
pub fn enumerated_exponent(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mdp.num_actions(), mdp.num_states());
    for a in 0..mdp.num_actions() {
        for t in enumerate_trajectories(mdp, &config.behavior, root, a, config.depth) {
            out[(a, t.leaf)] += t.probability * (config.beta * t.inner_reward).exp();
        }
    }
    out
}

/// The tree policy at `root` evaluated straight from its definition:
/// softmax of `beta E[l]` for C, normalized `E[exp(beta l)]` for E, where
/// `l` is the trajectory score `sum gamma^t r_t + gamma^d theta(s_d)`.
pub fn enumerated_policy(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> DVector<f64> {
    let a_count = mdp.num_actions();
    if config.depth == 0 {
        return DVector::from_element(a_count, 1.0 / a_count as f64);
    }
    let leaf_scale = mdp.discount().powi(config.depth as i32);
    let paths: Vec<Vec<Trajectory>> = (0..a_count)
        .map(|a| enumerate_trajectories(mdp, &config.behavior, root, a, config.depth))
        .collect();
    let score = |t: &Trajectory| t.discounted_reward + leaf_scale * config.theta[t.leaf];
    match config.variant {
        Variant::Cumulative => {
            let logits: Vec<f64> = paths
                .iter()
                .map(|ps| config.beta * ps.iter().map(|t| t.probability * score(t)).sum::<f64>())
                .collect();
            DVector::from_vec(softmax(&logits).0)
        }
        Variant::Exponentiated => {
            let w = DVector::from_fn(a_count, |a, _| {
                paths[a]
                    .iter()
                    .map(|t| t.probability * (config.beta * score(t)).exp())
                    .sum::<f64>()
            });
            let total = w.sum();
            w / total
        }
    }
}

/// Monte-Carlo estimate of `Q^pi(s, a)` from `episodes` rollouts truncated
/// at `horizon`. Returns `(mean, standard error)`.
pub fn rollout_q(
    mdp: &Mdp,
    policy: &StationaryPolicy,
    state: usize,
    action: usize,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes < 2 {
        return Err(TreeMaxError::InvalidConfig("need at least two episodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mdp.num_states();
    let next_dist: Vec<Vec<WeightedIndex<f64>>> = (0..n)
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| WeightedIndex::new(mdp.transition_from(s).row(a).iter().copied()).expect("stochastic row"))
                .collect()
        })
        .collect();
    let act_dist: Vec<WeightedIndex<f64>> = (0..n)
        .map(|s| WeightedIndex::new(policy.probs().row(s).iter().copied()).expect("stochastic row"))
        .collect();
    let gamma = mdp.discount();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let (mut s, mut a) = (state, action);
        let (mut g, mut disc) = (0.0, 1.0);
        for _ in 0..horizon {
            g += disc * mdp.reward(s, a);
            disc *= gamma;
            s = next_dist[s][a].sample(&mut rng);
            a = act_dist[s].sample(&mut rng);
        }
        sum += g;
        sum_sq += g * g;
    }
    let m = episodes as f64;
    let mean = sum / m;
    let var = (sum_sq - m * mean * mean) / (m - 1.0);
    Ok((mean, (var.max(0.0) / m).sqrt()))
}

/// Monte-Carlo estimate of the total policy-gradient variance: draws
/// `s ~ mu`, `a ~ pi(.|s)` and takes the unbiased sample covariance trace of
/// `grad log pi(a|s) Q(s, a)`. Returns `(estimate, standard error)`.
pub fn sampled_pg_variance(
    mdp: &Mdp,
    config: &TreePolicyConfig,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(TreeMaxError::InvalidConfig("need at least two samples".into()));
    }
    let model = TreeModel::new(mdp, config)?;
    let policy = model.policy_matrix()?;
    let q = solve_q(mdp, &policy)?;
    let mu = stationary_distribution(&induce_chain(mdp, &policy)?)?;
    let grads = (0..mdp.num_states())
        .map(|s| model.gradient(s).map(|g| g.values))
        .collect::<Result<Vec<_>>>()?;
    let state_dist = WeightedIndex::new(mu.iter().map(|m| m.max(0.0))).expect("stationary law");
    let act_dist: Vec<WeightedIndex<f64>> = (0..mdp.num_states())
        .map(|s| WeightedIndex::new(policy.probs().row(s).iter().copied()).expect("policy row"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<DVector<f64>> = (0..samples)
        .map(|_| {
            let s = state_dist.sample(&mut rng);
            let a = act_dist[s].sample(&mut rng);
            grads[s].row(a).transpose() * q[(s, a)]
        })
        .collect();
    let m = samples as f64;
    let mean = xs.iter().fold(DVector::zeros(mdp.num_states()), |acc, x| acc + x) / m;
    let dev: Vec<f64> = xs.iter().map(|x| (x - &mean).norm_squared()).collect();
    let estimate = dev.iter().sum::<f64>() / (m - 1.0);
    let spread = dev.iter().map(|y| (y - estimate).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((estimate, (spread / m).sqrt()))
}
