//! Exact SoftTreeMax distributions over root actions.
//!
//! For a root state `s`, depth `d`, inverse temperature `beta`, state score
//! vector `theta` and behavior policy `pi_b` with induced chain `P`:
//!
//! ```text
//! C variant: pi(.|s) ∝ exp(beta * (C_{s,d} + gamma^d P_s P^(d-1) theta))
//!            C_{s,d} = R_s + P_s sum_{h=1}^{d-1} gamma^h P^(h-1) R_pi
//! E variant: pi(.|s) ∝ E_{s,d} exp(beta gamma^d theta)
//!            E_{s,d} = P_s prod_{h=1}^{d-1} D(exp(beta gamma^h r)) P
//! ```
//!
//! The E product is evaluated in the factored form
//! `E_{s,d} = P_s D(M_1) B_1 ... B_{d-1}` with row-stochastic `B_h`, built
//! backwards from `M_d = 1`:
//!
//! ```text
//! B_h = D(P M_{h+1})^-1 P D(M_{h+1}),   M_h = exp(beta gamma^h r) ∘ (P M_{h+1})
//! ```
//!
//! `M_1` is carried in log space, so large `beta` never overflows.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TreeMaxError};
use crate::linalg::{softmax, spectral_norm, stationary_vector};
use crate::mdp::{induce_chain, InducedChain, Mdp, StationaryPolicy};
use crate::spectral::analyze_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Exponentiate the expected trajectory score.
    #[serde(rename = "C")]
    Cumulative,
    /// Take the expectation of the exponentiated trajectory score.
    #[serde(rename = "E")]
    Exponentiated,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cumulative => "C",
            Variant::Exponentiated => "E",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "C" | "c" | "cumulative" => Ok(Variant::Cumulative),
            "E" | "e" | "exponentiated" => Ok(Variant::Exponentiated),
            other => Err(format!("unknown variant `{other}` (expected C or E)")),
        }
    }
}

/// A SoftTreeMax configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePolicyConfig {
    pub variant: Variant,
    pub depth: usize,
    pub beta: f64,
    /// Score per state.
    pub theta: DVector<f64>,
    /// Tree expansion policy below the root action.
    pub behavior: StationaryPolicy,
}

impl TreePolicyConfig {
    pub fn new(
        variant: Variant,
        depth: usize,
        beta: f64,
        theta: DVector<f64>,
        behavior: StationaryPolicy,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(TreeMaxError::InvalidConfig(format!(
                "beta must be finite and positive, got {beta}"
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(TreeMaxError::InvalidConfig("theta must be finite".into()));
        }
        if theta.len() != behavior.num_states() {
            return Err(TreeMaxError::Dimension {
                context: "theta length vs behavior policy states",
                expected: behavior.num_states(),
                actual: theta.len(),
            });
        }
        Ok(Self {
            variant,
            depth,
            beta,
            theta,
            behavior,
        })
    }

    pub fn with_depth(&self, depth: usize) -> Self {
        Self {
            depth,
            ..self.clone()
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(
            self.variant,
            self.depth,
            beta,
            self.theta.clone(),
            self.behavior.clone(),
        )
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        Self::new(self.variant, self.depth, self.beta, theta, self.behavior.clone())
    }

    pub fn permute_states(&self, perm: &[usize]) -> Self {
        Self {
            theta: DVector::from_fn(perm.len(), |i, _| self.theta[perm[i]]),
            behavior: self.behavior.permute_states(perm),
            ..self.clone()
        }
    }
}

/// The action distribution at one root state.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePolicyDistribution {
    pub root_state: usize,
    pub probs: DVector<f64>,
    /// Log of the normalizer of the unnormalized weights (for E, with the
    /// action-independent root factor `exp(beta r(s))` dropped).
    pub log_partition: f64,
}

/// Expected discounted reward collected over the first `d` steps of every
/// trajectory rooted at `(s, a)`, one entry per root action.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantMatrix {
    pub root_state: usize,
    pub values: DVector<f64>,
}

/// `E_{s,d}` together with its stochastic factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentMatrix {
    pub root_state: usize,
    /// `A x S` matrix `P_s D(M_1) B_1 ... B_{d-1}`.
    pub values: DMatrix<f64>,
    /// `B_1, ..., B_{d-1}`, each row-stochastic.
    pub factors: Vec<DMatrix<f64>>,
    /// `M_1 > 0`.
    pub scale_vector: DVector<f64>,
    /// `log M_1`, kept for overflow-free evaluation.
    pub log_scale: DVector<f64>,
    /// `P_s`.
    pub root_transition: DMatrix<f64>,
}

impl ExponentMatrix {
    /// `B_1 B_2 ... B_{d-1}` (identity for `d = 1`).
    pub fn factor_product(&self) -> DMatrix<f64> {
        let n = self.log_scale.len();
        self.factors
            .iter()
            .fold(DMatrix::identity(n, n), |acc, b| acc * b)
    }

    /// Recomputes `P_s D(M_1) prod B_h` from the stored factors.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.root_transition.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.scale_vector[j];
        }
        scaled * self.factor_product()
    }
}

/// Evaluates policies and their building blocks for one `(mdp, config)` pair,
/// reusing the behavior chain across root states.
#[derive(Debug, Clone)]
pub struct TreeModel<'a> {
    mdp: &'a Mdp,
    config: &'a TreePolicyConfig,
    chain: InducedChain,
    state_rewards: Option<DVector<f64>>,
}

impl<'a> TreeModel<'a> {
    pub fn new(mdp: &'a Mdp, config: &'a TreePolicyConfig) -> Result<Self> {
        if config.theta.len() != mdp.num_states() {
            return Err(TreeMaxError::Dimension {
                context: "theta length",
                expected: mdp.num_states(),
                actual: config.theta.len(),
            });
        }
        let chain = induce_chain(mdp, &config.behavior)?;
        let state_rewards = match config.variant {
            Variant::Exponentiated => Some(mdp.state_rewards()?),
            Variant::Cumulative => mdp.state_rewards().ok(),
        };
        Ok(Self {
            mdp,
            config,
            chain,
            state_rewards,
        })
    }

    pub fn mdp(&self) -> &Mdp {
        self.mdp
    }

    pub fn config(&self) -> &TreePolicyConfig {
        self.config
    }

    /// The behavior chain `P^{pi_b}`.
    pub fn chain(&self) -> &InducedChain {
        &self.chain
    }

    fn check_root(&self, root: usize) -> Result<()> {
        if root >= self.mdp.num_states() {
            return Err(TreeMaxError::Dimension {
                context: "root state index",
                expected: self.mdp.num_states(),
                actual: root,
            });
        }
        Ok(())
    }

    fn uniform(&self, root: usize) -> TreePolicyDistribution {
        let a = self.mdp.num_actions();
        let logit = self.config.beta * self.config.theta[root];
        TreePolicyDistribution {
            root_state: root,
            probs: DVector::from_element(a, 1.0 / a as f64),
            log_partition: logit + (a as f64).ln(),
        }
    }

    pub fn cumulant(&self, root: usize) -> Result<CumulantMatrix> {
        self.check_root(root)?;
        let d = self.config.depth;
        if d == 0 {
            return Err(TreeMaxError::ZeroDepth);
        }
        let gamma = self.mdp.discount();
        let p = self.chain.transition();
        let r_pi = self.chain.reward();
        // Horner form of sum_{h=1}^{d-1} gamma^h P^(h-1) R_pi.
        let mut acc = DVector::zeros(self.mdp.num_states());
        for _ in 1..d {
            acc = r_pi + p * acc * gamma;
        }
        let values = self.mdp.reward_vector(root) + self.mdp.transition_from(root) * acc * gamma;
        Ok(CumulantMatrix {
            root_state: root,
            values,
        })
    }

    /// `P_s P^(d-1) v` by repeated matrix-vector products.
    fn propagate_to_leaves(&self, root: usize, v: &DVector<f64>) -> DVector<f64> {
        let p = self.chain.transition();
        let mut t = v.clone();
        for _ in 1..self.config.depth {
            t = p * t;
        }
        self.mdp.transition_from(root) * t
    }

    /// `P_s P^(d-1)`: distribution of the depth-`d` leaf state per root action.
    pub fn leaf_kernel(&self, root: usize) -> DMatrix<f64> {
        let p = self.chain.transition();
        let mut k = self.mdp.transition_from(root).clone();
        for _ in 1..self.config.depth {
            k *= p;
        }
        k
    }

    /// Expected C-variant logits `E l_{s,a}(d; theta)` (before `beta`).
    pub fn expected_logits(&self, root: usize) -> Result<DVector<f64>> {
        let d = self.config.depth;
        if d == 0 {
            self.check_root(root)?;
            return Ok(DVector::from_element(
                self.mdp.num_actions(),
                self.config.theta[root],
            ));
        }
        let c = self.cumulant(root)?;
        let gamma_d = self.mdp.discount().powi(d as i32);
        Ok(c.values + self.propagate_to_leaves(root, &self.config.theta) * gamma_d)
    }

    pub fn policy_c(&self, root: usize) -> Result<TreePolicyDistribution> {
        self.check_root(root)?;
        if self.config.depth == 0 {
            return Ok(self.uniform(root));
        }
        let logits: Vec<f64> = self
            .expected_logits(root)?
            .iter()
            .map(|l| self.config.beta * l)
            .collect();
        let (probs, log_partition) = softmax(&logits);
        Ok(TreePolicyDistribution {
            root_state: root,
            probs: DVector::from_vec(probs),
            log_partition,
        })
    }

    fn require_state_rewards(&self) -> Result<&DVector<f64>> {
        match &self.state_rewards {
            Some(r) => Ok(r),
            None => Err(self.mdp.state_rewards().unwrap_err()),
        }
    }

    pub fn exponent(&self, root: usize) -> Result<ExponentMatrix> {
        self.check_root(root)?;
        let d = self.config.depth;
        if d == 0 {
            return Err(TreeMaxError::ZeroDepth);
        }
        let r = self.require_state_rewards()?;
        let n = self.mdp.num_states();
        let gamma = self.mdp.discount();
        let beta = self.config.beta;
        let p = self.chain.transition();

        let mut log_m = DVector::<f64>::zeros(n);
        let mut factors = Vec::with_capacity(d.saturating_sub(1));
        for h in (1..d).rev() {
            let shift = log_m.max();
            let m_shifted = log_m.map(|x| (x - shift).exp());
            let row_mass = p * &m_shifted;
            let b = DMatrix::from_fn(n, n, |j, k| p[(j, k)] * m_shifted[k] / row_mass[j]);
            let gh = beta * gamma.powi(h as i32);
            log_m = DVector::from_fn(n, |j, _| gh * r[j] + row_mass[j].ln() + shift);
            factors.push(b);
        }
        factors.reverse();

        let scale_vector = log_m.map(f64::exp);
        let mut em = ExponentMatrix {
            root_state: root,
            values: DMatrix::zeros(0, 0),
            factors,
            scale_vector,
            log_scale: log_m,
            root_transition: self.mdp.transition_from(root).clone(),
        };
        em.values = em.reconstruct();
        Ok(em)
    }

    /// `E_{s,d}` by the plain left-to-right product, without normalization.
    pub fn direct_exponent(&self, root: usize) -> Result<DMatrix<f64>> {
        self.check_root(root)?;
        let d = self.config.depth;
        if d == 0 {
            return Err(TreeMaxError::ZeroDepth);
        }
        let r = self.require_state_rewards()?;
        let gamma = self.mdp.discount();
        let p = self.chain.transition();
        let mut acc = self.mdp.transition_from(root).clone();
        for h in 1..d {
            let weights = r.map(|x| (self.config.beta * gamma.powi(h as i32) * x).exp());
            let mut dp = p.clone();
            for (j, mut row) in dp.row_iter_mut().enumerate() {
                row *= weights[j];
            }
            acc *= dp;
        }
        Ok(acc)
    }

    /// `exp(beta gamma^d theta - max)`, the shifted leaf weights.
    pub(crate) fn shifted_leaf_weights(&self) -> (DVector<f64>, f64) {
        let scale = self.config.beta * self.mdp.discount().powi(self.config.depth as i32);
        let logs = &self.config.theta * scale;
        let shift = logs.max();
        (logs.map(|x| (x - shift).exp()), shift)
    }

    pub fn policy_e(&self, root: usize) -> Result<TreePolicyDistribution> {
        self.check_root(root)?;
        self.require_state_rewards()?;
        if self.config.depth == 0 {
            return Ok(self.uniform(root));
        }
        let em = self.exponent(root)?;
        let (mut y, leaf_shift) = self.shifted_leaf_weights();
        for b in em.factors.iter().rev() {
            y = b * y;
        }
        let scale_shift = em.log_scale.max();
        let m_shifted = em.log_scale.map(|x| (x - scale_shift).exp());
        let inner = m_shifted.component_mul(&y);
        let weights = &em.root_transition * inner;
        let total: f64 = weights.sum();
        Ok(TreePolicyDistribution {
            root_state: root,
            probs: weights / total,
            log_partition: total.ln() + scale_shift + leaf_shift,
        })
    }

    pub fn distribution(&self, root: usize) -> Result<TreePolicyDistribution> {
        match self.config.variant {
            Variant::Cumulative => self.policy_c(root),
            Variant::Exponentiated => self.policy_e(root),
        }
    }

    /// Full `S x A` policy matrix.
    pub fn policy_matrix(&self) -> Result<StationaryPolicy> {
        let n = self.mdp.num_states();
        let mut probs = DMatrix::zeros(n, self.mdp.num_actions());
        for s in 0..n {
            probs.set_row(s, &self.distribution(s)?.probs.transpose());
        }
        StationaryPolicy::new(probs)
    }
}

pub fn build_cumulant(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<CumulantMatrix> {
    TreeModel::new(mdp, config)?.cumulant(root)
}

pub fn policy_c(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<TreePolicyDistribution> {
    TreeModel::new(mdp, &config.with_variant(Variant::Cumulative))?.policy_c(root)
}

pub fn build_exponent(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<ExponentMatrix> {
    TreeModel::new(mdp, &config.with_variant(Variant::Exponentiated))?.exponent(root)
}

pub fn direct_exponent(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<DMatrix<f64>> {
    TreeModel::new(mdp, &config.with_variant(Variant::Exponentiated))?.direct_exponent(root)
}

pub fn policy_e(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<TreePolicyDistribution> {
    TreeModel::new(mdp, &config.with_variant(Variant::Exponentiated))?.policy_e(root)
}

/// Dispatches on `config.variant`.
pub fn tree_policy(
    mdp: &Mdp,
    config: &TreePolicyConfig,
    root: usize,
) -> Result<TreePolicyDistribution> {
    TreeModel::new(mdp, config)?.distribution(root)
}

/// Distance of the partial factor products `B_1 ... B_k` from rank one,
/// for `k = 1, ..., d-1`.
///
/// The rank-one reference for each product is `1 mu_k^T`, with `mu_k` the
/// stationary vector of the product itself.
pub fn factor_decay(matrix: &ExponentMatrix) -> Result<Vec<f64>> {
    if matrix.factors.is_empty() {
        return Err(TreeMaxError::InvalidConfig(
            "factor_decay needs depth >= 2 (at least one factor)".into(),
        ));
    }
    for b in &matrix.factors {
        let report = analyze_matrix(b)?;
        if !report.mixing_flag {
            return Err(TreeMaxError::NonMixing {
                lambda2: report.lambda2_modulus,
            });
        }
    }
    let n = matrix.log_scale.len();
    let mut product = DMatrix::<f64>::identity(n, n);
    let mut curve = Vec::with_capacity(matrix.factors.len());
    for b in &matrix.factors {
        product *= b;
        let mu = stationary_vector(&product)?;
        let limit = DMatrix::from_fn(n, n, |_, j| mu[j]);
        curve.push(spectral_norm(&(&product - limit)));
    }
    Ok(curve)
}
