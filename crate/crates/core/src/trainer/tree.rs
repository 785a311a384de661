//! Breadth-first tree expansion with width pruning, and the policy read off
//! the surviving leaves.

use nalgebra::{DMatrix, DVector};

use super::env::SimEnvironment;
use crate::error::{Result, TreeMaxError};
use crate::linalg::softmax;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub state: usize,
    /// `sum_t gamma^t r_t` along the path from the root.
    pub cumulative_reward: f64,
    pub root_action: usize,
    /// Uniform-expansion probability of the path given its root action,
    /// `A^-(steps below the root action)`. A terminal node keeps its weight
    /// and stands for all the leaves it would have had.
    pub weight: f64,
    pub terminal: bool,
}

/// Frontier per level. `levels[l]` holds nodes `l + 1` actions below the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionTree {
    pub root: usize,
    pub levels: Vec<Vec<TreeNode>>,
    pub width_limit: usize,
    pub depth: usize,
    pub gamma: f64,
    pub num_actions: usize,
}

impl ExpansionTree {
    pub fn leaves(&self) -> &[TreeNode] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Running logit of a leaf: reward so far plus the discounted leaf score.
    pub fn leaf_logit(&self, node: &TreeNode, theta: &[f64]) -> f64 {
        node.cumulative_reward + self.gamma.powi(self.depth as i32) * theta[node.state]
    }
}

/// Expands every action of every node level by level. When a level exceeds
/// `width`, keeps the `width` nodes with the largest running logit; ties keep
/// the earlier node. Survivors stay in expansion order.
pub fn expand(
    env: &dyn SimEnvironment,
    root: usize,
    depth: usize,
    width: usize,
    gamma: f64,
    theta: &[f64],
) -> Result<ExpansionTree> {
    let num_actions = env.num_actions();
    if depth < 1 {
        return Err(TreeMaxError::ZeroDepth);
    }
    if width < num_actions {
        return Err(TreeMaxError::InvalidConfig(format!(
            "width {width} cannot hold all {num_actions} root actions"
        )));
    }
    if theta.len() != env.num_states() {
        return Err(TreeMaxError::Dimension {
            context: "theta length vs environment states",
            expected: env.num_states(),
            actual: theta.len(),
        });
    }
    let mut levels: Vec<Vec<TreeNode>> = Vec::with_capacity(depth);
    let mut frontier: Vec<TreeNode> = (0..num_actions)
        .map(|a| {
            let step = env.step(root, a);
            TreeNode {
                state: step.next,
                cumulative_reward: step.reward,
                root_action: a,
                weight: 1.0,
                terminal: step.terminal,
            }
        })
        .collect();
    for level in 0..depth {
        if level > 0 {
            let discount = gamma.powi(level as i32);
            let mut next = Vec::with_capacity(frontier.len() * num_actions);
            for node in &frontier {
                if node.terminal {
                    next.push(node.clone());
                    continue;
                }
                for a in 0..num_actions {
                    let step = env.step(node.state, a);
                    next.push(TreeNode {
                        state: step.next,
                        cumulative_reward: node.cumulative_reward + discount * step.reward,
                        root_action: node.root_action,
                        weight: node.weight / num_actions as f64,
                        terminal: step.terminal,
                    });
                }
            }
            frontier = next;
        }
        if frontier.len() > width {
            let leaf_discount = gamma.powi(level as i32 + 1);
            let logit = |n: &TreeNode| n.cumulative_reward + leaf_discount * theta[n.state];
            let mut order: Vec<usize> = (0..frontier.len()).collect();
            order.sort_by(|&i, &j| logit(&frontier[j]).total_cmp(&logit(&frontier[i])));
            order.truncate(width);
            order.sort_unstable();
            frontier = order.into_iter().map(|i| frontier[i].clone()).collect();
        }
        levels.push(frontier.clone());
    }
    Ok(ExpansionTree {
        root,
        levels,
        width_limit: width,
        depth,
        gamma,
        num_actions,
    })
}

/// Root-action distribution of a pruned tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeDistribution {
    pub probs: DVector<f64>,
    /// Weighted mean leaf logit per root action; `None` when pruning removed
    /// every leaf of that action.
    pub logits: Vec<Option<f64>>,
    /// Root actions with no surviving leaf (probability 0).
    pub empty_actions: Vec<usize>,
}

/// Softmax of `beta` times the mean leaf logit per root action.
///
/// The mean is weighted by the uniform-expansion path weight, so without
/// terminal nodes it is the plain average over surviving leaves.
pub fn tree_policy_from_expansion(
    tree: &ExpansionTree,
    theta: &[f64],
    beta: f64,
) -> Result<TreeDistribution> {
    let leaves = tree.leaves();
    if leaves.is_empty() {
        return Err(TreeMaxError::InvalidConfig("expansion tree has no leaves".into()));
    }
    let a = tree.num_actions;
    let mut sum = vec![0.0; a];
    let mut mass = vec![0.0; a];
    for leaf in leaves {
        sum[leaf.root_action] += leaf.weight * tree.leaf_logit(leaf, theta);
        mass[leaf.root_action] += leaf.weight;
    }
    let logits: Vec<Option<f64>> = (0..a)
        .map(|i| (mass[i] > 0.0).then(|| sum[i] / mass[i]))
        .collect();
    let live: Vec<usize> = (0..a).filter(|&i| logits[i].is_some()).collect();
    let scaled: Vec<f64> = live.iter().map(|&i| beta * logits[i].unwrap()).collect();
    let (p, _) = softmax(&scaled);
    let mut probs = DVector::zeros(a);
    for (k, &i) in live.iter().enumerate() {
        probs[i] = p[k];
    }
    Ok(TreeDistribution {
        probs,
        empty_actions: (0..a).filter(|&i| logits[i].is_none()).collect(),
        logits,
    })
}

/// `d log pi(a|root) / d theta`, an `A x S` matrix. Rows of empty actions
/// are zero.
pub fn tree_log_policy_gradient(
    tree: &ExpansionTree,
    dist: &TreeDistribution,
    beta: f64,
    num_states: usize,
) -> DMatrix<f64> {
    let a = tree.num_actions;
    let leaf_discount = tree.gamma.powi(tree.depth as i32);
    let mut dlogit = DMatrix::zeros(a, num_states);
    let mut mass = vec![0.0; a];
    for leaf in tree.leaves() {
        dlogit[(leaf.root_action, leaf.state)] += leaf.weight;
        mass[leaf.root_action] += leaf.weight;
    }
    for (i, m) in mass.iter().enumerate() {
        if *m > 0.0 {
            let mut row = dlogit.row_mut(i);
            row *= leaf_discount / m;
        }
    }
    let mean = dist.probs.transpose() * &dlogit;
    let mut grad = DMatrix::zeros(a, num_states);
    for i in 0..a {
        if mass[i] > 0.0 {
            for k in 0..num_states {
                grad[(i, k)] = beta * (dlogit[(i, k)] - mean[k]);
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::env::{ChainEnv, GridWorld};

    #[test]
    fn depth_one_logits_are_one_step() {
        let env = ChainEnv::new(5).unwrap();
        let theta = [0.1, 0.2, 0.3, 0.4, 0.5];
        let tree = expand(&env, 3, 1, 8, 0.9, &theta).unwrap();
        assert_eq!(tree.leaves().len(), 2);
        let dist = tree_policy_from_expansion(&tree, &theta, 1.0).unwrap();
        assert!((dist.logits[0].unwrap() - 0.9 * 0.3).abs() < 1e-15);
        assert!((dist.logits[1].unwrap() - (1.0 + 0.9 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn full_depth_three_tree_has_eight_leaves() {
        let env = ChainEnv::new(8).unwrap();
        let theta: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let tree = expand(&env, 2, 3, usize::MAX, 0.5, &theta).unwrap();
        assert_eq!(tree.leaves().len(), 8);
        // Right first: 3, then 2 or 4, then 1, 3, 3, 5.
        let mut right: Vec<usize> = tree
            .leaves()
            .iter()
            .filter(|l| l.root_action == 1)
            .map(|l| l.state)
            .collect();
        right.sort_unstable();
        assert_eq!(right, vec![1, 3, 3, 5]);
    }

    #[test]
    fn width_caps_every_level() {
        let theta = vec![0.0; 16];
        let tree = expand(&GridWorld, 5, 4, 10, 0.9, &theta).unwrap();
        for level in &tree.levels {
            assert!(level.len() <= 10);
        }
        assert_eq!(tree.levels[0].len(), 4);
    }

    #[test]
    fn total_tie_keeps_first_nodes() {
        let theta = vec![0.0; 16];
        let full = expand(&GridWorld, 5, 2, usize::MAX, 0.9, &theta).unwrap();
        let pruned = expand(&GridWorld, 5, 2, 6, 0.9, &theta).unwrap();
        assert_eq!(pruned.leaves(), &full.leaves()[..6]);
    }

    #[test]
    fn pruned_actions_get_zero_probability() {
        let theta = vec![0.0; 16];
        let pruned = expand(&GridWorld, 5, 2, 6, 0.9, &theta).unwrap();
        let dist = tree_policy_from_expansion(&pruned, &theta, 1.0).unwrap();
        assert_eq!(dist.empty_actions, vec![2, 3]);
        assert_eq!(dist.probs[2], 0.0);
        assert!((dist.probs.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_width_and_depth() {
        let env = ChainEnv::new(5).unwrap();
        let theta = vec![0.0; 5];
        assert!(expand(&env, 0, 2, 1, 0.9, &theta).is_err());
        assert!(matches!(expand(&env, 0, 0, 4, 0.9, &theta), Err(TreeMaxError::ZeroDepth)));
    }

    #[test]
    fn tiny_beta_is_uniform_over_live_actions() {
        let env = ChainEnv::new(5).unwrap();
        let theta = [3.0, -1.0, 2.0, 0.0, 5.0];
        let tree = expand(&env, 1, 3, 64, 0.9, &theta).unwrap();
        let dist = tree_policy_from_expansion(&tree, &theta, 1e-12).unwrap();
        assert!((dist.probs[0] - 0.5).abs() < 1e-10);
    }
}
