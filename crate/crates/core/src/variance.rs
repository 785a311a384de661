//! Exact policy-gradient variance and its bounds.
//!
//! For a tree policy `pi_theta` with stationary distribution `mu` and exact
//! action values `Q`, each `(s, a)` pair contributes the `S`-vector
//! `X(s, a) = grad log pi(a|s) * Q(s, a)`. The reported variance is the total
//! variance of `X` under `s ~ mu, a ~ pi(.|s)`:
//!
//! ```text
//! Var = sum_s mu(s) sum_a pi(a|s) ||X(s,a)||^2 - ||sum_s mu(s) sum_a pi(a|s) X(s,a)||^2
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, TreeMaxError};
use crate::mdp::{generate_mdp, induce_chain, solve_q, stationary_distribution, Mdp, RegimeSpec};
use crate::policy::{TreeModel, TreePolicyConfig, Variant};
use crate::spectral::analyze_spectrum;

/// Negative variances closer to zero than this (relative to the second
/// moment) are float cancellation and are clamped to zero.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub depth: usize,
    pub variant: Variant,
    pub exact_variance: f64,
    /// `max Q^2 * max_s ||grad log pi(.|s)||_F^2`.
    pub lemma1_bound: f64,
    /// Closed-form depth bound; only defined for the C variant.
    pub theorem_bound: Option<f64>,
    /// `|lambda_2|` of the behavior chain.
    pub lambda2: f64,
    /// Exact variance at the first depth of the sweep (`1` outside a sweep).
    pub normalization: f64,
    /// `exact_variance / normalization`.
    pub normalized_variance: f64,
    /// `(gamma |lambda_2|)^(2 (d - d_0))`, equal to 1 at the first depth.
    pub normalized_model: f64,
}

/// Per-state gradient matrices, the policy, its `Q` and stationary law.
struct VarianceInputs {
    gradients: Vec<DMatrix<f64>>,
    policy: DMatrix<f64>,
    q: DMatrix<f64>,
    mu: DVector<f64>,
}

fn variance_inputs(mdp: &Mdp, config: &TreePolicyConfig) -> Result<VarianceInputs> {
    let model = TreeModel::new(mdp, config)?;
    let policy = model.policy_matrix()?;
    let gradients = (0..mdp.num_states())
        .map(|s| model.gradient(s).map(|g| g.values))
        .collect::<Result<Vec<_>>>()?;
    let q = solve_q(mdp, &policy)?;
    let mu = stationary_distribution(&induce_chain(mdp, &policy)?)?;
    Ok(VarianceInputs {
        gradients,
        policy: policy.probs().clone(),
        q,
        mu,
    })
}

fn total_variance(inputs: &VarianceInputs) -> Result<f64> {
    let n = inputs.mu.len();
    let mut second = 0.0;
    let mut mean = DVector::<f64>::zeros(n);
    for (s, g) in inputs.gradients.iter().enumerate() {
        for a in 0..g.nrows() {
            let w = inputs.mu[s] * inputs.policy[(s, a)];
            let q = inputs.q[(s, a)];
            let row = g.row(a);
            second += w * q * q * row.norm_squared();
            mean += row.transpose() * (w * q);
        }
    }
    let var = second - mean.norm_squared();
    if var < -NEGATIVE_VARIANCE_TOL * second.max(1.0) {
        return Err(TreeMaxError::NegativeVariance(var));
    }
    Ok(var.max(0.0))
}

fn lemma1_value(inputs: &VarianceInputs) -> f64 {
    let max_q2 = inputs.q.iter().map(|q| q * q).fold(0.0, f64::max);
    let max_g2 = inputs
        .gradients
        .iter()
        .map(|g| g.norm_squared())
        .fold(0.0, f64::max);
    max_q2 * max_g2
}

/// `2 A^2 S^2 beta^2 / (1 - gamma)^2 * gamma^(2d) * |lambda_2|^(2(d-1))`.
pub fn theorem1_bound_value(
    num_actions: usize,
    num_states: usize,
    beta: f64,
    gamma: f64,
    depth: usize,
    lambda2: f64,
) -> f64 {
    let a = num_actions as f64;
    let s = num_states as f64;
    let d = depth as i32;
    2.0 * a * a * s * s * beta * beta / (1.0 - gamma).powi(2)
        * gamma.powi(2 * d)
        * lambda2.powi(2 * (d - 1))
}

/// Plug-in evaluation of the closed-form bound for `config`, using the
/// behavior chain's `|lambda_2|`. The bound is stated for the C variant.
pub fn theorem1_bound(mdp: &Mdp, config: &TreePolicyConfig) -> Result<f64> {
    let lambda2 = analyze_spectrum(&induce_chain(mdp, &config.behavior)?)?.lambda2_modulus;
    Ok(theorem1_bound_value(
        mdp.num_actions(),
        mdp.num_states(),
        config.beta,
        mdp.discount(),
        config.depth,
        lambda2,
    ))
}

fn model_curve(gamma: f64, lambda2: f64, depth: usize, first: usize) -> f64 {
    (gamma * lambda2).powi(2 * (depth as i32 - first as i32))
}

fn report_with_lambda(mdp: &Mdp, config: &TreePolicyConfig, lambda2: f64) -> Result<VarianceReport> {
    let inputs = variance_inputs(mdp, config)?;
    let exact = total_variance(&inputs)?;
    let theorem_bound = match config.variant {
        Variant::Cumulative => Some(theorem1_bound_value(
            mdp.num_actions(),
            mdp.num_states(),
            config.beta,
            mdp.discount(),
            config.depth,
            lambda2,
        )),
        Variant::Exponentiated => None,
    };
    Ok(VarianceReport {
        depth: config.depth,
        variant: config.variant,
        exact_variance: exact,
        lemma1_bound: lemma1_value(&inputs),
        theorem_bound,
        lambda2,
        normalization: 1.0,
        normalized_variance: exact,
        normalized_model: model_curve(mdp.discount(), lambda2, config.depth, 0),
    })
}

/// Exact total variance of `grad log pi * Q` for the tree policy `config`.
pub fn exact_pg_variance(mdp: &Mdp, config: &TreePolicyConfig) -> Result<VarianceReport> {
    let lambda2 = analyze_spectrum(&induce_chain(mdp, &config.behavior)?)?.lambda2_modulus;
    report_with_lambda(mdp, config, lambda2)
}

/// One report per depth, normalized at the first depth.
pub fn depth_sweep(
    mdp: &Mdp,
    base_config: &TreePolicyConfig,
    depths: &[usize],
) -> Result<Vec<VarianceReport>> {
    if depths.is_empty() {
        return Err(TreeMaxError::InvalidConfig("depth list is empty".into()));
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TreeMaxError::InvalidConfig(
            "depths must be strictly ascending".into(),
        ));
    }
    let lambda2 = analyze_spectrum(&induce_chain(mdp, &base_config.behavior)?)?.lambda2_modulus;
    let mut reports = depths
        .iter()
        .map(|&d| report_with_lambda(mdp, &base_config.with_depth(d), lambda2))
        .collect::<Result<Vec<_>>>()?;
    let first = depths[0];
    let normalization = reports[0].exact_variance;
    for r in &mut reports {
        r.normalization = normalization;
        r.normalized_variance = r.exact_variance / normalization;
        r.normalized_model = model_curve(mdp.discount(), lambda2, r.depth, first);
    }
    Ok(reports)
}

/// Least-squares slope of `ln y` against `x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Fitted per-depth variance ratio divided by `gamma^2 |lambda_2|^2`.
///
/// `None` when the ratio is undefined: `|lambda_2|` is (numerically) zero,
/// fewer than two depths are given, or some variance is not positive.
pub fn conjecture_check_e(
    mdp: &Mdp,
    base_config: &TreePolicyConfig,
    depths: &[usize],
) -> Result<Option<f64>> {
    if base_config.variant != Variant::Exponentiated {
        return Err(TreeMaxError::InvalidConfig(
            "conjecture check applies to the E variant".into(),
        ));
    }
    let reports = depth_sweep(mdp, base_config, depths)?;
    let lambda2 = reports[0].lambda2;
    if lambda2 < 1e-10 || depths.len() < 2 || reports.iter().any(|r| r.exact_variance <= 0.0) {
        return Ok(None);
    }
    let x: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.exact_variance).collect();
    let ratio = log_slope(&x, &y).exp();
    Ok(Some(ratio / (mdp.discount() * lambda2).powi(2)))
}

/// Seeded `theta` in `[0, 1]^S`, drawn from a stream separate from the MDP's.
pub fn seeded_theta(num_states: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    DVector::from_fn(num_states, |_, _| rng.random::<f64>())
}

/// A generated MDP with a seeded score vector, ready for sweeping.
pub fn toy_instance(
    spec: &RegimeSpec,
    seed: u64,
    variant: Variant,
    beta: f64,
) -> Result<(Mdp, TreePolicyConfig)> {
    let (mdp, behavior) = generate_mdp(spec, seed)?;
    let theta = seeded_theta(spec.num_states, seed);
    let config = TreePolicyConfig::new(variant, 1, beta, theta, behavior)?;
    Ok((mdp, config))
}

/// Result of sweeping one `(spec, seed)` instance.
#[derive(Debug)]
pub struct SweepOutcome {
    pub spec: RegimeSpec,
    pub seed: u64,
    pub reports: Result<Vec<VarianceReport>>,
}

/// Runs `depth_sweep` on every `(spec, seed)` pair with `jobs` workers.
///
/// Outcomes come back sorted by `(regime, seed)`, independent of scheduling.
pub fn run_sweeps(
    specs: &[RegimeSpec],
    seeds: &[u64],
    variant: Variant,
    beta: f64,
    depths: &[usize],
    jobs: usize,
) -> Result<Vec<SweepOutcome>> {
    let tasks: Vec<(RegimeSpec, u64)> = specs
        .iter()
        .flat_map(|spec| seeds.iter().map(move |&seed| (*spec, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TreeMaxError::InvalidConfig(format!("thread pool: {e}")))?;
    let mut outcomes: Vec<SweepOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(spec, seed)| SweepOutcome {
                spec,
                seed,
                reports: toy_instance(&spec, seed, variant, beta)
                    .and_then(|(mdp, config)| depth_sweep(&mdp, &config, depths)),
            })
            .collect()
    });
    outcomes.sort_by_key(|o| (o.spec.regime, o.seed));
    Ok(outcomes)
}
