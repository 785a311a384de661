//! Exact tabular laboratory for SoftTreeMax policies.
//!
//! The crate builds both policy variants (cumulative-reward `C` and
//! exponentiated-reward `E`) in closed vector form, their analytic
//! log-policy gradients, and the exact policy-gradient variance under the
//! stationary distribution of the policy. It also ships a small
//! breadth-first tree-expansion trainer over deterministic toy environments.
//!
//! Module map:
//! - [`mdp`]: finite MDPs, induced chains, value/Q solvers, regime generator.
//! - [`spectral`]: eigenvalue moduli and power remainders of induced chains.
//! - [`policy`]: the two SoftTreeMax distributions and their building blocks.
//! - [`gradient`]: analytic gradient matrices and norm bounds.
//! - [`gradcheck`]: finite-difference verification of the gradients.
//! - [`oracle`]: trajectory enumeration and Monte-Carlo references.
//! - [`variance`]: exact variance, bounds and depth sweeps.
//! - [`trainer`]: tree expansion, tree policy and REINFORCE training.

pub mod error;
pub mod gradcheck;
pub mod gradient;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod spectral;
pub mod trainer;
pub mod variance;

pub use error::{Result, TreeMaxError};
pub use gradient::{grad_c, grad_e, grad_norm_bounds, GradientMatrix, GradientNormBounds};
pub use mdp::{
    generate_mdp, induce_chain, solve_q, solve_value, stationary_distribution, InducedChain, Mdp,
    Regime, RegimeSpec, RewardMode, StationaryPolicy,
};
pub use policy::{
    build_cumulant, build_exponent, factor_decay, policy_c, policy_e, tree_policy,
    CumulantMatrix, ExponentMatrix, TreePolicyConfig, TreePolicyDistribution, Variant,
};
pub use spectral::{analyze_spectrum, power_remainder, SpectralReport};
pub use variance::{
    conjecture_check_e, depth_sweep, exact_pg_variance, theorem1_bound, VarianceReport,
};
