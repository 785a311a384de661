//! Finite discounted MDPs, policy-induced chains and exact solvers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TreeMaxError};
use crate::linalg::{check_simplex, renormalize, stationary_vector};
use crate::spectral::analyze_spectrum;

/// Residual tolerance for the linear solvers.
pub const SOLVE_TOL: f64 = 1e-10;

/// A finite discounted MDP with state-action rewards in `[0, 1]`.
///
/// Transitions are stored per source state as `A x S` matrices, so that
/// `transition_from(s)[(a, s')] = Pr(s' | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<DMatrix<f64>>,
    rewards: DMatrix<f64>,
    discount: f64,
}

/// On-disk JSON layout of an [`Mdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Row-major `[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `[s][a]`.
    pub rewards: Vec<Vec<f64>>,
}

impl Mdp {
    /// Builds and validates an MDP from nested `[s][a][s']` and `[s][a]` arrays.
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        let num_states = transitions.len();
        if num_states == 0 {
            return Err(TreeMaxError::InvalidConfig("MDP needs at least one state".into()));
        }
        let num_actions = transitions[0].len();
        if num_actions == 0 {
            return Err(TreeMaxError::InvalidConfig("MDP needs at least one action".into()));
        }
        let mut per_state = Vec::with_capacity(num_states);
        for rows in transitions.iter() {
            if rows.len() != num_actions {
                return Err(TreeMaxError::Dimension {
                    context: "transitions[s] action count",
                    expected: num_actions,
                    actual: rows.len(),
                });
            }
            let mut m = DMatrix::zeros(num_actions, num_states);
            for (a, row) in rows.iter().enumerate() {
                if row.len() != num_states {
                    return Err(TreeMaxError::Dimension {
                        context: "transitions[s][a] length",
                        expected: num_states,
                        actual: row.len(),
                    });
                }
                for (sp, &p) in row.iter().enumerate() {
                    m[(a, sp)] = p;
                }
            }
            per_state.push(m);
        }
        if rewards.len() != num_states {
            return Err(TreeMaxError::Dimension {
                context: "rewards state count",
                expected: num_states,
                actual: rewards.len(),
            });
        }
        let mut r = DMatrix::zeros(num_states, num_actions);
        for (s, row) in rewards.iter().enumerate() {
            if row.len() != num_actions {
                return Err(TreeMaxError::Dimension {
                    context: "rewards[s] length",
                    expected: num_actions,
                    actual: row.len(),
                });
            }
            for (a, &v) in row.iter().enumerate() {
                r[(s, a)] = v;
            }
        }
        Self::from_parts(per_state, r, discount)
    }

    /// Builds from per-state `A x S` matrices and an `S x A` reward matrix.
    pub fn from_parts(
        transitions: Vec<DMatrix<f64>>,
        rewards: DMatrix<f64>,
        discount: f64,
    ) -> Result<Self> {
        let num_states = transitions.len();
        let num_actions = rewards.ncols();
        if rewards.nrows() != num_states {
            return Err(TreeMaxError::Dimension {
                context: "rewards rows",
                expected: num_states,
                actual: rewards.nrows(),
            });
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(TreeMaxError::InvalidDiscount(discount));
        }
        for (s, m) in transitions.iter().enumerate() {
            if m.nrows() != num_actions || m.ncols() != num_states {
                return Err(TreeMaxError::Dimension {
                    context: "per-state transition matrix",
                    expected: num_actions * num_states,
                    actual: m.nrows() * m.ncols(),
                });
            }
            for a in 0..num_actions {
                let row: Vec<f64> = m.row(a).iter().copied().collect();
                check_simplex(&row, || format!("transitions[{s}][{a}]"))?;
            }
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                let v = rewards[(s, a)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(TreeMaxError::RewardOutOfRange {
                        state: s,
                        action: a,
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `P_s`: the `A x S` matrix of next-state distributions from `state`.
    pub fn transition_from(&self, state: usize) -> &DMatrix<f64> {
        &self.transitions[state]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transitions[state][(action, next)]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[(state, action)]
    }

    /// `S x A` reward matrix.
    pub fn rewards(&self) -> &DMatrix<f64> {
        &self.rewards
    }

    /// `R_s = r(s, .)` as an `A`-vector.
    pub fn reward_vector(&self, state: usize) -> DVector<f64> {
        self.rewards.row(state).transpose()
    }

    /// State-only reward view `r(s) := r(s, 0)`.
    ///
    /// Fails when any state has rewards that differ across actions.
    pub fn state_rewards(&self) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.num_states);
        for s in 0..self.num_states {
            let first = self.rewards[(s, 0)];
            if (1..self.num_actions).any(|a| self.rewards[(s, a)] != first) {
                return Err(TreeMaxError::ActionDependentReward { state: s });
            }
            out[s] = first;
        }
        Ok(out)
    }

    pub fn has_state_rewards(&self) -> bool {
        self.state_rewards().is_ok()
    }

    /// Same dynamics with a replaced reward matrix.
    pub fn with_rewards(&self, rewards: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(self.transitions.clone(), rewards, self.discount)
    }

    /// Same dynamics and rewards with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::from_parts(self.transitions.clone(), self.rewards.clone(), discount)
    }

    /// Relabels states: new state `i` is old state `perm[i]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_states;
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut transitions = Vec::with_capacity(n);
        let mut rewards = DMatrix::zeros(n, self.num_actions);
        for &old in perm {
            let src = &self.transitions[old];
            let mut m = DMatrix::zeros(self.num_actions, n);
            for a in 0..self.num_actions {
                for sp in 0..n {
                    m[(a, inverse[sp])] = src[(a, sp)];
                }
            }
            transitions.push(m);
        }
        for (new, &old) in perm.iter().enumerate() {
            for a in 0..self.num_actions {
                rewards[(new, a)] = self.rewards[(old, a)];
            }
        }
        Self::from_parts(transitions, rewards, self.discount)
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.discount,
            transitions: self
                .transitions
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            rewards: self
                .rewards
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_file(file: MdpFile) -> Result<Self> {
        if file.transitions.len() != file.num_states {
            return Err(TreeMaxError::Dimension {
                context: "num_states vs transitions",
                expected: file.num_states,
                actual: file.transitions.len(),
            });
        }
        if let Some(first) = file.transitions.first() {
            if first.len() != file.num_actions {
                return Err(TreeMaxError::Dimension {
                    context: "num_actions vs transitions[0]",
                    expected: file.num_actions,
                    actual: first.len(),
                });
            }
        }
        Self::new(file.transitions, file.rewards, file.gamma)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// A stationary stochastic policy, `probs[(s, a)] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    probs: DMatrix<f64>,
}

impl StationaryPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            check_simplex(&row, || format!("policy[{s}]"))?;
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.len();
        let a = rows.first().map_or(0, Vec::len);
        let mut m = DMatrix::zeros(s, a);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != a {
                return Err(TreeMaxError::Dimension {
                    context: "policy row length",
                    expected: a,
                    actual: row.len(),
                });
            }
            for (j, &p) in row.iter().enumerate() {
                m[(i, j)] = p;
            }
        }
        Self::new(m)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy choosing `action` everywhere.
    pub fn constant_action(num_states: usize, num_actions: usize, action: usize) -> Self {
        let mut probs = DMatrix::zeros(num_states, num_actions);
        for s in 0..num_states {
            probs[(s, action)] = 1.0;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[(state, action)]
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn permute_states(&self, perm: &[usize]) -> Self {
        let mut probs = DMatrix::zeros(self.num_states(), self.num_actions());
        for (new, &old) in perm.iter().enumerate() {
            probs.set_row(new, &self.probs.row(old));
        }
        Self { probs }
    }
}

/// A Markov reward process: `P^pi` and `R_pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    transition: DMatrix<f64>,
    reward: DVector<f64>,
}

impl InducedChain {
    pub fn new(transition: DMatrix<f64>, reward: DVector<f64>) -> Result<Self> {
        let n = transition.nrows();
        if transition.ncols() != n {
            return Err(TreeMaxError::Dimension {
                context: "chain must be square",
                expected: n,
                actual: transition.ncols(),
            });
        }
        if reward.len() != n {
            return Err(TreeMaxError::Dimension {
                context: "chain reward length",
                expected: n,
                actual: reward.len(),
            });
        }
        for s in 0..n {
            let row: Vec<f64> = transition.row(s).iter().copied().collect();
            check_simplex(&row, || format!("chain row {s}"))?;
        }
        Ok(Self { transition, reward })
    }

    /// Chain with zero reward, for purely spectral work.
    pub fn from_transition(transition: DMatrix<f64>) -> Result<Self> {
        let n = transition.nrows();
        Self::new(transition, DVector::zeros(n))
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }
}

fn check_policy_dims(mdp: &Mdp, policy: &StationaryPolicy) -> Result<()> {
    if policy.num_states() != mdp.num_states() {
        return Err(TreeMaxError::Dimension {
            context: "policy state count",
            expected: mdp.num_states(),
            actual: policy.num_states(),
        });
    }
    if policy.num_actions() != mdp.num_actions() {
        return Err(TreeMaxError::Dimension {
            context: "policy action count",
            expected: mdp.num_actions(),
            actual: policy.num_actions(),
        });
    }
    Ok(())
}

/// `P^pi(s'|s) = sum_a pi(a|s) P(s'|s,a)` and `R_pi(s) = sum_a pi(a|s) r(s,a)`.
pub fn induce_chain(mdp: &Mdp, policy: &StationaryPolicy) -> Result<InducedChain> {
    check_policy_dims(mdp, policy)?;
    let n = mdp.num_states();
    let mut transition = DMatrix::zeros(n, n);
    let mut reward = DVector::zeros(n);
    for s in 0..n {
        let pi_s = policy.probs.row(s);
        let mut row = (pi_s * mdp.transition_from(s)).transpose();
        renormalize(row.as_mut_slice());
        transition.set_row(s, &row.transpose());
        reward[s] = pi_s.dot(&mdp.rewards.row(s));
    }
    Ok(InducedChain { transition, reward })
}

/// Solves `(I - gamma P^pi) V = R_pi`.
pub fn solve_value(mdp: &Mdp, policy: &StationaryPolicy) -> Result<DVector<f64>> {
    let chain = induce_chain(mdp, policy)?;
    solve_chain_value(&chain, mdp.discount())
}

/// Discounted value of a Markov reward process.
pub fn solve_chain_value(chain: &InducedChain, discount: f64) -> Result<DVector<f64>> {
    let n = chain.num_states();
    let system = DMatrix::<f64>::identity(n, n) - chain.transition() * discount;
    let value = system
        .clone()
        .lu()
        .solve(chain.reward())
        .ok_or_else(|| TreeMaxError::LinearSolve("I - gamma P is singular".into()))?;
    let residual = (&system * &value - chain.reward()).amax();
    if residual > SOLVE_TOL {
        return Err(TreeMaxError::LinearSolve(format!(
            "value residual {residual:e} exceeds {SOLVE_TOL:e}"
        )));
    }
    Ok(value)
}

/// `Q(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V^pi(s')`, as an `S x A` matrix.
pub fn solve_q(mdp: &Mdp, policy: &StationaryPolicy) -> Result<DMatrix<f64>> {
    let value = solve_value(mdp, policy)?;
    Ok(q_from_value(mdp, &value))
}

pub fn q_from_value(mdp: &Mdp, value: &DVector<f64>) -> DMatrix<f64> {
    let mut q = mdp.rewards.clone();
    for s in 0..mdp.num_states() {
        let next = mdp.transition_from(s) * value;
        for a in 0..mdp.num_actions() {
            q[(s, a)] += mdp.discount() * next[a];
        }
    }
    q
}

/// Unique stationary distribution of an irreducible aperiodic chain.
pub fn stationary_distribution(chain: &InducedChain) -> Result<DVector<f64>> {
    let report = analyze_spectrum(chain)?;
    if !report.mixing_flag {
        return Err(TreeMaxError::NonMixing {
            lambda2: report.lambda2_modulus,
        });
    }
    let mu = stationary_vector(chain.transition())?;
    let residual = (chain.transition().transpose() * &mu - &mu).amax();
    if residual > SOLVE_TOL {
        return Err(TreeMaxError::LinearSolve(format!(
            "stationary residual {residual:e} exceeds {SOLVE_TOL:e}"
        )));
    }
    Ok(mu)
}

/// Prototype transition structure of a generated behavior chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `(1 - mix) * uniform + mix * random`.
    NearUniform,
    /// `(1 - mix) * random + mix * uniform`.
    Random,
    /// `(1 - mix) * permutation + mix * uniform`.
    NearPermutation,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::NearUniform, Regime::Random, Regime::NearPermutation];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::NearUniform => "near_uniform",
            Regime::Random => "random",
            Regime::NearPermutation => "near_permutation",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "near_uniform" | "near-uniform" | "uniform" => Ok(Regime::NearUniform),
            "random" => Ok(Regime::Random),
            "near_permutation" | "near-permutation" | "permutation" => {
                Ok(Regime::NearPermutation)
            }
            other => Err(format!(
                "unknown regime `{other}` (expected uniform, random or permutation)"
            )),
        }
    }
}

/// How rewards of a generated MDP are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RewardMode {
    /// Independent uniform `[0,1]` reward per `(s, a)`.
    StateAction,
    /// Uniform `[0,1]` reward per state, shared by all actions.
    State,
    /// The same reward everywhere.
    Constant(f64),
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardMode::StateAction => f.write_str("state_action"),
            RewardMode::State => f.write_str("state"),
            RewardMode::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

impl FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "state_action" | "state-action" => Ok(RewardMode::StateAction),
            "state" => Ok(RewardMode::State),
            "constant" => Ok(RewardMode::Constant(0.5)),
            other => match other.strip_prefix("constant:") {
                Some(v) => v
                    .parse::<f64>()
                    .map(RewardMode::Constant)
                    .map_err(|e| format!("bad constant reward `{v}`: {e}")),
                None => Err(format!(
                    "unknown reward mode `{other}` (expected state_action, state, constant[:c])"
                )),
            },
        }
    }
}

/// Parameters of a randomly generated MDP with a prescribed behavior chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regime: Regime,
    /// Mixing weight `epsilon` in `[0, 1]`.
    pub mix: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub rewards: RewardMode,
    pub discount: f64,
}

impl RegimeSpec {
    pub fn new(regime: Regime, mix: f64, num_states: usize, num_actions: usize) -> Self {
        Self {
            regime,
            mix,
            num_states,
            num_actions,
            rewards: RewardMode::StateAction,
            discount: 0.9,
        }
    }

    pub fn with_rewards(mut self, rewards: RewardMode) -> Self {
        self.rewards = rewards;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(TreeMaxError::InvalidConfig(format!(
                "mixing weight {} outside [0, 1]",
                self.mix
            )));
        }
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(TreeMaxError::InvalidConfig(
                "state and action counts must be positive".into(),
            ));
        }
        if let RewardMode::Constant(c) = self.rewards {
            if !(0.0..=1.0).contains(&c) {
                return Err(TreeMaxError::InvalidConfig(format!(
                    "constant reward {c} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

fn dirichlet_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    renormalize(&mut row);
    row
}

fn random_stochastic(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        let row = dirichlet_row(rng, n);
        for (j, v) in row.into_iter().enumerate() {
            m[(s, j)] = v;
        }
    }
    m
}

/// Random permutation matrix via Fisher-Yates.
fn random_permutation(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut m = DMatrix::zeros(n, n);
    for (s, &t) in perm.iter().enumerate() {
        m[(s, t)] = 1.0;
    }
    m
}

/// Builds action-dependent dynamics whose mixture under `behavior` equals
/// `target` row by row.
///
/// Each action's row is `target + eta * (G_a - sum_b pi_b(b) G_b)` with
/// Dirichlet draws `G_a`; `eta <= 1` is the largest step keeping all rows
/// non-negative, so the behavior mixture cancels the perturbation exactly.
pub fn mdp_with_behavior_chain(
    target: &DMatrix<f64>,
    behavior: &StationaryPolicy,
    rewards: DMatrix<f64>,
    discount: f64,
    rng: &mut impl Rng,
) -> Result<Mdp> {
    let n = target.nrows();
    let num_actions = behavior.num_actions();
    let mut transitions = Vec::with_capacity(n);
    for s in 0..n {
        let draws: Vec<Vec<f64>> = (0..num_actions).map(|_| dirichlet_row(rng, n)).collect();
        let mut mean = vec![0.0; n];
        for (a, g) in draws.iter().enumerate() {
            for j in 0..n {
                mean[j] += behavior.prob(s, a) * g[j];
            }
        }
        let mut eta: f64 = 1.0;
        for g in &draws {
            for j in 0..n {
                let delta = g[j] - mean[j];
                if delta < 0.0 {
                    eta = eta.min(target[(s, j)] / -delta);
                }
            }
        }
        let mut m = DMatrix::zeros(num_actions, n);
        for (a, g) in draws.iter().enumerate() {
            let mut row: Vec<f64> = (0..n)
                .map(|j| target[(s, j)] + eta * (g[j] - mean[j]))
                .collect();
            renormalize(&mut row);
            for (j, v) in row.into_iter().enumerate() {
                m[(a, j)] = v;
            }
        }
        transitions.push(m);
    }
    Mdp::from_parts(transitions, rewards, discount)
}

fn draw_rewards(rng: &mut impl Rng, mode: RewardMode, n: usize, num_actions: usize) -> DMatrix<f64> {
    match mode {
        RewardMode::StateAction => DMatrix::from_fn(n, num_actions, |_, _| rng.random::<f64>()),
        RewardMode::State => {
            let per_state: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            DMatrix::from_fn(n, num_actions, |s, _| per_state[s])
        }
        RewardMode::Constant(c) => DMatrix::from_element(n, num_actions, c),
    }
}

/// The behavior-chain target for a regime, before action splitting.
pub fn regime_target(rng: &mut impl Rng, spec: &RegimeSpec) -> DMatrix<f64> {
    let n = spec.num_states;
    let uniform = DMatrix::from_element(n, n, 1.0 / n as f64);
    let eps = spec.mix;
    let mut target = match spec.regime {
        Regime::NearUniform => uniform * (1.0 - eps) + random_stochastic(rng, n) * eps,
        Regime::Random => random_stochastic(rng, n) * (1.0 - eps) + uniform * eps,
        Regime::NearPermutation => random_permutation(rng, n) * (1.0 - eps) + uniform * eps,
    };
    for s in 0..n {
        let mut row: Vec<f64> = target.row(s).iter().copied().collect();
        renormalize(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            target[(s, j)] = v;
        }
    }
    target
}

/// Draws an MDP and a behavior policy whose induced chain follows `spec`.
///
/// Deterministic for a fixed seed.
pub fn generate_mdp(spec: &RegimeSpec, seed: u64) -> Result<(Mdp, StationaryPolicy)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_states;
    let num_actions = spec.num_actions;
    let target = regime_target(&mut rng, spec);

    let uniform_row = 1.0 / num_actions as f64;
    let mut probs = DMatrix::zeros(n, num_actions);
    for s in 0..n {
        let draw = dirichlet_row(&mut rng, num_actions);
        let mut row: Vec<f64> = draw.iter().map(|p| 0.5 * uniform_row + 0.5 * p).collect();
        renormalize(&mut row);
        for (a, p) in row.into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    let behavior = StationaryPolicy::new(probs)?;
    let rewards = draw_rewards(&mut rng, spec.rewards, n, num_actions);
    let mdp = mdp_with_behavior_chain(&target, &behavior, rewards, spec.discount, &mut rng)?;
    Ok((mdp, behavior))
}

/// Draws an MDP with unconstrained dynamics: every `P(.|s,a)` is Dirichlet.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    rewards: RewardMode,
    discount: f64,
    seed: u64,
) -> Result<(Mdp, StationaryPolicy)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..num_states)
        .map(|_| {
            let mut m = DMatrix::zeros(num_actions, num_states);
            for a in 0..num_actions {
                for (j, v) in dirichlet_row(&mut rng, num_states).into_iter().enumerate() {
                    m[(a, j)] = v;
                }
            }
            m
        })
        .collect();
    let mut probs = DMatrix::zeros(num_states, num_actions);
    for s in 0..num_states {
        for (a, p) in dirichlet_row(&mut rng, num_actions).into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    let r = draw_rewards(&mut rng, rewards, num_states, num_actions);
    let mdp = Mdp::from_parts(transitions, r, discount)?;
    Ok((mdp, StationaryPolicy::new(probs)?))
}

/// Tolerance-aware equality on chain rows, used by tests and reports.
pub fn max_row_defect(chain: &InducedChain) -> f64 {
    chain
        .transition()
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}
