//! REINFORCE with return-to-go over tree policies or a flat softmax baseline.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::env::SimEnvironment;
use super::tree::{expand, tree_log_policy_gradient, tree_policy_from_expansion};
use crate::error::{Result, TreeMaxError};
use crate::linalg::softmax;

/// Abort threshold on `||theta||_inf`.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Tree depth; `0` trains the flat state-action softmax baseline.
    pub depth: usize,
    pub width: usize,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Episode length cap.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 1024,
            beta: 1.0,
            gamma: 0.9,
            learning_rate: 0.5,
            batch_size: 16,
            iterations: 300,
            horizon: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, env: &dyn SimEnvironment) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TreeMaxError::InvalidDiscount(self.gamma));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(TreeMaxError::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TreeMaxError::InvalidConfig(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(TreeMaxError::InvalidConfig(
                "batch size must be at least 2 to estimate a variance".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(TreeMaxError::InvalidConfig("horizon must be positive".into()));
        }
        if self.depth > 0 && self.width < env.num_actions() {
            return Err(TreeMaxError::InvalidConfig(format!(
                "width {} cannot hold all {} root actions",
                self.width,
                env.num_actions()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Batch mean of the discounted return from the initial state.
    pub mean_return: f64,
    /// Trace of the sample covariance of the per-episode gradients.
    pub empirical_grad_variance: f64,
    /// Mean entropy of the policy over non-terminal states, before the update.
    pub policy_entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrainStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    /// Wall time per iteration in milliseconds (not part of the records).
    pub wall_ms: Vec<f64>,
    pub status: TrainStatus,
    /// Final parameters, `S` entries for trees and `S * A` for the baseline.
    pub theta: Vec<f64>,
}

/// Policy and log-policy gradient at every non-terminal state for fixed
/// parameters. Gradient rows are flattened over the parameter vector.
struct PolicyTable {
    probs: Vec<Vec<f64>>,
    grads: Vec<DMatrix<f64>>,
}

fn policy_table(env: &dyn SimEnvironment, config: &TrainConfig, theta: &[f64]) -> Result<PolicyTable> {
    let n = env.num_states();
    let num_actions = env.num_actions();
    let mut probs = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for s in 0..n {
        if env.is_terminal(s) {
            probs.push(vec![1.0 / num_actions as f64; num_actions]);
            grads.push(DMatrix::zeros(num_actions, theta.len()));
            continue;
        }
        if config.depth == 0 {
            let logits: Vec<f64> = (0..num_actions)
                .map(|a| config.beta * theta[s * num_actions + a])
                .collect();
            let (p, _) = softmax(&logits);
            let mut g = DMatrix::zeros(num_actions, theta.len());
            for a in 0..num_actions {
                for b in 0..num_actions {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    g[(a, s * num_actions + b)] = config.beta * (indicator - p[b]);
                }
            }
            probs.push(p);
            grads.push(g);
        } else {
            let tree = expand(env, s, config.depth, config.width, config.gamma, theta)?;
            let dist = tree_policy_from_expansion(&tree, theta, config.beta)?;
            grads.push(tree_log_policy_gradient(&tree, &dist, config.beta, n));
            probs.push(dist.probs.iter().copied().collect());
        }
    }
    Ok(PolicyTable { probs, grads })
}

fn entropy(env: &dyn SimEnvironment, table: &PolicyTable) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for (s, p) in table.probs.iter().enumerate() {
        if env.is_terminal(s) {
            continue;
        }
        total -= p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn sample_action(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Rolls out one episode and returns `(G_0, sum_t grad log pi(a_t|s_t) G_t)`.
fn episode(
    env: &dyn SimEnvironment,
    config: &TrainConfig,
    table: &PolicyTable,
    rng: &mut impl Rng,
) -> (f64, Vec<f64>) {
    let mut state = env.initial_state();
    let mut visited: Vec<(usize, usize)> = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..config.horizon {
        let a = sample_action(rng, &table.probs[state]);
        let step = env.step(state, a);
        visited.push((state, a));
        rewards.push(step.reward);
        state = step.next;
        if step.terminal {
            break;
        }
    }
    let dim = table.grads[0].ncols();
    let mut grad = vec![0.0; dim];
    let mut to_go = 0.0;
    for t in (0..visited.len()).rev() {
        to_go = rewards[t] + config.gamma * to_go;
        if to_go == 0.0 {
            continue;
        }
        let (s, a) = visited[t];
        for (k, g) in table.grads[s].row(a).iter().enumerate() {
            grad[k] += g * to_go;
        }
    }
    (to_go, grad)
}

/// Trains tabular scores with REINFORCE. Deterministic for a fixed seed.
pub fn train(env: &dyn SimEnvironment, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(env)?;
    let dim = if config.depth == 0 {
        env.num_states() * env.num_actions()
    } else {
        env.num_states()
    };
    let mut theta = vec![0.0; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.iterations);
    let mut wall_ms = Vec::with_capacity(config.iterations);
    let mut status = TrainStatus::Completed;
    let batch = config.batch_size as f64;

    for iteration in 0..config.iterations {
        let start = Instant::now();
        let table = policy_table(env, config, &theta)?;
        let mut returns = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for _ in 0..config.batch_size {
            let (g0, grad) = episode(env, config, &table, &mut rng);
            returns += g0;
            for k in 0..dim {
                sum[k] += grad[k];
                sum_sq[k] += grad[k] * grad[k];
            }
        }
        let variance: f64 = (0..dim)
            .map(|k| ((sum_sq[k] - sum[k] * sum[k] / batch) / (batch - 1.0)).max(0.0))
            .sum();
        records.push(TrainRecord {
            iteration,
            mean_return: returns / batch,
            empirical_grad_variance: variance,
            policy_entropy: entropy(env, &table),
        });
        for k in 0..dim {
            theta[k] += config.learning_rate * sum[k] / batch;
        }
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if theta.iter().any(|t| !t.is_finite() || t.abs() > DIVERGENCE_LIMIT) {
            status = TrainStatus::Diverged;
            break;
        }
    }
    Ok(TrainOutcome {
        records,
        wall_ms,
        status,
        theta,
    })
}

/// Exact policy of the trained parameters at one state, for inspection.
pub fn policy_at(env: &dyn SimEnvironment, config: &TrainConfig, theta: &[f64], state: usize) -> Result<Vec<f64>> {
    Ok(policy_table(env, config, theta)?.probs.swap_remove(state))
}
