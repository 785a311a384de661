//! Desk-scale SoftTreeMax training over deterministic simulators.
//!
//! Each decision expands the full action tree below the current state to a
//! fixed depth, prunes every level to a width cap, and scores each root
//! action by the mean of `reward so far + gamma^d theta(leaf)` over its
//! surviving leaves. `theta` is a per-state table trained with REINFORCE.

pub mod env;
pub mod train;
pub mod tree;

pub use env::{tabular_twin, ChainEnv, EnvKind, GridWorld, SimEnvironment, Step};
pub use train::{train, TrainConfig, TrainOutcome, TrainRecord, TrainStatus};
pub use tree::{
    expand, tree_log_policy_gradient, tree_policy_from_expansion, ExpansionTree, TreeDistribution,
    TreeNode,
};
