use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{check_actions, Env, EnvError, EnvSpec, Observation, StepResult};

/// Two-state, two-agent, three-action cooperative game. Rows index agent 1's
/// action, columns agent 2's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixGameConfig {
    pub payoff_s1: [[f32; 3]; 3],
    pub payoff_s2: [[f32; 3]; 3],
    pub episode_limit: usize,
}

impl Default for MatrixGameConfig {
    fn default() -> Self {
        Self {
            payoff_s1: [[4.0, -2.0, -2.0], [-2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]],
            payoff_s2: [[-2.0, 0.0, 0.0], [4.0, -2.0, -2.0], [-2.0, 0.0, 0.0]],
            episode_limit: 1,
        }
    }
}

impl MatrixGameConfig {
    pub fn payoff(&self, state: usize) -> &[[f32; 3]; 3] {
        if state == 0 {
            &self.payoff_s1
        } else {
            &self.payoff_s2
        }
    }
}

/// Agent 1 cannot tell the states apart (its observation is the constant
/// `[1, 0]`); agent 2 and the global state are the state one-hot.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    config: MatrixGameConfig,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    state: usize,
    t: usize,
    done: bool,
}

impl MatrixGame {
    pub const N_STATES: usize = 2;

    pub fn new(config: MatrixGameConfig) -> Result<Self, EnvError> {
        if config.episode_limit == 0 {
            return Err(EnvError::InvalidConfig("episode_limit must be at least 1".into()));
        }
        let finite = [config.payoff_s1, config.payoff_s2]
            .iter()
            .flatten()
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(EnvError::InvalidConfig("payoffs must be finite".into()));
        }
        let spec = EnvSpec {
            n_agents: 2,
            n_actions: 3,
            obs_dim: 2,
            state_dim: 2,
            episode_limit: config.episode_limit,
            has_win_condition: false,
        };
        Ok(Self {
            config,
            spec,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: 0,
            t: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &MatrixGameConfig {
        &self.config
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    /// Observation the agents receive in `state` (0 for s1, 1 for s2).
    pub fn observation_for(state: usize) -> Observation {
        let mut one_hot = vec![0.0; 2];
        one_hot[state] = 1.0;
        let mut obs = vec![1.0, 0.0];
        obs.extend_from_slice(&one_hot);
        Observation {
            state: one_hot,
            obs,
            avail: vec![true; 6],
        }
    }
}

impl Env for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.rng.random_range(0..Self::N_STATES);
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        check_actions(&self.spec, &[true; 6], actions)?;
        let reward = self.config.payoff(self.state)[actions[0]][actions[1]];
        self.t += 1;
        let terminated = self.t >= self.spec.episode_limit;
        self.done = terminated;
        if !terminated {
            self.state = self.rng.random_range(0..Self::N_STATES);
        }
        Ok(StepResult {
            reward,
            terminated,
            truncated: false,
            next: self.observation(),
        })
    }

    fn observation(&self) -> Observation {
        Self::observation_for(self.state)
    }
}
