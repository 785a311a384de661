//! Deterministic toy environments with exact tabular twins.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Result, TreeMaxError};
use crate::mdp::Mdp;

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// A deterministic simulator whose states are table indices.
///
/// Stepping a terminal state returns it unchanged with zero reward.
pub trait SimEnvironment: Send + Sync {
    fn name(&self) -> &str;
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn initial_state(&self) -> usize;
    fn is_terminal(&self, state: usize) -> bool;
    fn step(&self, state: usize, action: usize) -> Step;

    /// Largest discounted return reachable from the initial state.
    fn optimal_return(&self, gamma: f64) -> f64;
}

/// `k` states in a row. Action 0 moves left (staying at 0), action 1 moves
/// right. Entering state `k - 1` pays 1 and ends the episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEnv {
    length: usize,
}

impl ChainEnv {
    pub fn new(length: usize) -> Result<Self> {
        if length < 2 {
            return Err(TreeMaxError::InvalidConfig(format!(
                "chain needs at least 2 states, got {length}"
            )));
        }
        Ok(Self { length })
    }
}

impl SimEnvironment for ChainEnv {
    fn name(&self) -> &str {
        "chain"
    }

    fn num_states(&self) -> usize {
        self.length
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn is_terminal(&self, state: usize) -> bool {
        state == self.length - 1
    }

    fn step(&self, state: usize, action: usize) -> Step {
        if self.is_terminal(state) {
            return Step { next: state, reward: 0.0, terminal: true };
        }
        let next = if action == 0 { state.saturating_sub(1) } else { state + 1 };
        let terminal = self.is_terminal(next);
        Step {
            next,
            reward: if terminal { 1.0 } else { 0.0 },
            terminal,
        }
    }

    fn optimal_return(&self, gamma: f64) -> f64 {
        gamma.powi(self.length as i32 - 2)
    }
}

/// 4x4 grid, start top-left, rewarding terminal bottom-right.
///
/// Actions: 0 up, 1 right, 2 down, 3 left. Moves into a wall stay put.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridWorld;

impl GridWorld {
    pub const SIDE: usize = 4;
}

impl SimEnvironment for GridWorld {
    fn name(&self) -> &str {
        "grid"
    }

    fn num_states(&self) -> usize {
        Self::SIDE * Self::SIDE
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn is_terminal(&self, state: usize) -> bool {
        state == Self::SIDE * Self::SIDE - 1
    }

    fn step(&self, state: usize, action: usize) -> Step {
        if self.is_terminal(state) {
            return Step { next: state, reward: 0.0, terminal: true };
        }
        let (row, col) = (state / Self::SIDE, state % Self::SIDE);
        let (row, col) = match action {
            0 => (row.saturating_sub(1), col),
            1 => (row, (col + 1).min(Self::SIDE - 1)),
            2 => ((row + 1).min(Self::SIDE - 1), col),
            _ => (row, col.saturating_sub(1)),
        };
        let next = row * Self::SIDE + col;
        let terminal = self.is_terminal(next);
        Step {
            next,
            reward: if terminal { 1.0 } else { 0.0 },
            terminal,
        }
    }

    fn optimal_return(&self, gamma: f64) -> f64 {
        gamma.powi(2 * (Self::SIDE as i32 - 1) - 1)
    }
}

/// Built-in environment selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Chain(usize),
    Grid,
}

impl EnvKind {
    pub fn build(&self) -> Result<Box<dyn SimEnvironment>> {
        Ok(match *self {
            EnvKind::Chain(k) => Box::new(ChainEnv::new(k)?),
            EnvKind::Grid => Box::new(GridWorld),
        })
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::Chain(k) => write!(f, "chain:{k}"),
            EnvKind::Grid => f.write_str("grid"),
        }
    }
}

impl FromStr for EnvKind {
    type Err = String;

    /// `chain` (5 states), `chain:k`, or `grid`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "chain" => Ok(EnvKind::Chain(5)),
            "grid" | "gridworld" => Ok(EnvKind::Grid),
            other => match other.strip_prefix("chain:") {
                Some(k) => k
                    .parse()
                    .map(EnvKind::Chain)
                    .map_err(|e| format!("bad chain length `{k}`: {e}")),
                None => Err(format!("unknown environment `{other}` (expected chain, chain:k or grid)")),
            },
        }
    }
}

/// The environment as a tabular MDP. Terminal states become absorbing with
/// zero reward.
pub fn tabular_twin(env: &dyn SimEnvironment, gamma: f64) -> Result<Mdp> {
    let n = env.num_states();
    let num_actions = env.num_actions();
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = DMatrix::zeros(n, num_actions);
    for s in 0..n {
        let mut m = DMatrix::zeros(num_actions, n);
        for a in 0..num_actions {
            let step = env.step(s, a);
            m[(a, step.next)] = 1.0;
            rewards[(s, a)] = step.reward;
        }
        transitions.push(m);
    }
    Mdp::from_parts(transitions, rewards, gamma)
}
