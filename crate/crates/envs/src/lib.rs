//! Cooperative multi-agent environments with a shared reward.
//!
//! Every environment implements [`Env`]: agents act jointly, receive one
//! scalar reward, and see local observations plus per-agent masks of
//! available actions. Observations and masks are flattened agent-major.

mod matrix_game;
mod predator_prey;

pub use matrix_game::{MatrixGame, MatrixGameConfig};
pub use predator_prey::{PredatorPrey, PredatorPreyConfig, CATCH, EAST, NORTH, SOUTH, STAY, WEST};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent} chose unavailable action {action}")]
    UnavailableAction { agent: usize, action: usize },
    #[error("step called on a finished episode")]
    EpisodeOver,
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
    pub has_win_condition: bool,
}

/// What the agents see at a decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: Vec<f32>,
    /// `n_agents × obs_dim`
    pub obs: Vec<f32>,
    /// `n_agents × n_actions`
    pub avail: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f32,
    pub terminated: bool,
    /// Reached the episode limit without terminating.
    pub truncated: bool,
    pub next: Observation,
}

/// Per-episode outcome counters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeStats {
    pub won: Option<bool>,
    pub captures: Option<u32>,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a fresh episode; identical seeds give identical episodes.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;

    fn observation(&self) -> Observation;

    fn stats(&self) -> EpisodeStats {
        EpisodeStats::default()
    }
}

pub(crate) fn check_actions(spec: &EnvSpec, avail: &[bool], actions: &[usize]) -> Result<(), EnvError> {
    if actions.len() != spec.n_agents {
        return Err(EnvError::ActionCount {
            expected: spec.n_agents,
            got: actions.len(),
        });
    }
    for (agent, &action) in actions.iter().enumerate() {
        if action >= spec.n_actions || !avail[agent * spec.n_actions + action] {
            return Err(EnvError::UnavailableAction { agent, action });
        }
    }
    Ok(())
}
