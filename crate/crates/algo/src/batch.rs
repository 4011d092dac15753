use pac_autodiff::{Real, Tensor};
use pac_envs::{EnvSpec, EpisodeStats, Observation, StepResult};

use crate::error::{AlgoError, Result};

/// One recorded episode. Observation-like fields hold `len + 1` slots: the
/// decision points plus the observation after the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub len: usize,
    pub states: Vec<f32>,
    pub obs: Vec<f32>,
    pub avail: Vec<bool>,
    /// `len × n_agents`
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    /// Ended by the environment rather than by the step limit.
    pub terminated: bool,
    pub stats: EpisodeStats,
}

impl Episode {
    pub fn start(spec: &EnvSpec, first: &Observation) -> Self {
        let mut ep = Self {
            n_agents: spec.n_agents,
            n_actions: spec.n_actions,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            len: 0,
            states: Vec::new(),
            obs: Vec::new(),
            avail: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            stats: EpisodeStats::default(),
        };
        ep.push_obs(first);
        ep
    }

    fn push_obs(&mut self, o: &Observation) {
        self.states.extend_from_slice(&o.state);
        self.obs.extend_from_slice(&o.obs);
        self.avail.extend_from_slice(&o.avail);
    }

    pub fn push(&mut self, actions: &[usize], step: &StepResult) {
        self.actions.extend_from_slice(actions);
        self.rewards.push(step.reward);
        self.terminated = step.terminated;
        self.len += 1;
        self.push_obs(&step.next);
    }

    pub fn total_reward(&self) -> f32 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let slots = self.len + 1;
        let checks = [
            ("states", self.states.len(), slots * self.state_dim),
            ("obs", self.obs.len(), slots * self.n_agents * self.obs_dim),
            ("avail", self.avail.len(), slots * self.n_agents * self.n_actions),
            ("actions", self.actions.len(), self.len * self.n_agents),
            ("rewards", self.rewards.len(), self.len),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(AlgoError::Episode(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.len == 0 {
            return Err(AlgoError::Episode("episode has no steps".into()));
        }
        Ok(())
    }
}

/// Episodes padded to a common length, laid out time-major. Agent rows are
/// indexed `(t · batch + b) · n_agents + i` and step rows `t · batch + b`.
/// Slot `t = max_len` holds the observation after the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub batch: usize,
    pub max_len: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub lens: Vec<usize>,
    /// `(max_len + 1) · batch × state_dim`
    pub states: Vec<f32>,
    /// `(max_len + 1) · batch · n × obs_dim`
    pub obs: Vec<f32>,
    /// `(max_len + 1) · batch · n × n_actions`; padding is all-available.
    pub avail: Vec<bool>,
    /// `max_len · batch · n`; padding is action 0.
    pub actions: Vec<usize>,
    /// `max_len · batch`
    pub rewards: Vec<f32>,
    pub terminated: Vec<bool>,
    /// `max_len · batch`; true for real steps.
    pub filled: Vec<bool>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&Episode]) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| AlgoError::Episode("empty batch".into()))?;
        let (n, k, o, s) = (first.n_agents, first.n_actions, first.obs_dim, first.state_dim);
        for ep in episodes {
            ep.validate()?;
            if (ep.n_agents, ep.n_actions, ep.obs_dim, ep.state_dim) != (n, k, o, s) {
                return Err(AlgoError::Episode("episodes from different environments".into()));
            }
        }
        let bsz = episodes.len();
        let t_max = episodes.iter().map(|e| e.len).max().unwrap_or(0);
        let slots = t_max + 1;
        let mut b = Self {
            batch: bsz,
            max_len: t_max,
            n_agents: n,
            n_actions: k,
            obs_dim: o,
            state_dim: s,
            lens: episodes.iter().map(|e| e.len).collect(),
            states: vec![0.0; slots * bsz * s],
            obs: vec![0.0; slots * bsz * n * o],
            avail: vec![true; slots * bsz * n * k],
            actions: vec![0; t_max * bsz * n],
            rewards: vec![0.0; t_max * bsz],
            terminated: vec![false; t_max * bsz],
            filled: vec![false; t_max * bsz],
        };
        for (bi, ep) in episodes.iter().enumerate() {
            for t in 0..=ep.len {
                let row = t * bsz + bi;
                b.states[row * s..][..s].copy_from_slice(&ep.states[t * s..][..s]);
                b.obs[row * n * o..][..n * o].copy_from_slice(&ep.obs[t * n * o..][..n * o]);
                b.avail[row * n * k..][..n * k].copy_from_slice(&ep.avail[t * n * k..][..n * k]);
                if t < ep.len {
                    b.actions[row * n..][..n].copy_from_slice(&ep.actions[t * n..][..n]);
                    b.rewards[row] = ep.rewards[t];
                    b.filled[row] = true;
                    b.terminated[row] = ep.terminated && t + 1 == ep.len;
                }
            }
        }
        Ok(b)
    }

    pub fn step_rows(&self) -> usize {
        self.max_len * self.batch
    }

    pub fn agent_rows(&self) -> usize {
        self.step_rows() * self.n_agents
    }

    pub fn valid_steps(&self) -> usize {
        self.filled.iter().filter(|&&f| f).count()
    }

    /// Step mask repeated per agent.
    pub fn agent_filled(&self) -> Vec<bool> {
        self.filled
            .iter()
            .flat_map(|&f| std::iter::repeat_n(f, self.n_agents))
            .collect()
    }

    /// Width of [`agent_inputs`](Self::agent_inputs).
    pub fn agent_input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Width of [`message_inputs`](Self::message_inputs).
    pub fn message_input_dim(&self) -> usize {
        self.obs_dim + self.n_agents
    }

    /// Slot `t`: observation ⊕ previous action one-hot ⊕ agent id one-hot,
    /// `[batch · n, obs + K + n]`.
    pub fn agent_inputs<T: Real>(&self, t: usize) -> Tensor<T> {
        let (n, k, o) = (self.n_agents, self.n_actions, self.obs_dim);
        let rows = self.batch * n;
        let w = self.agent_input_dim();
        let mut data = vec![T::zero(); rows * w];
        for r in 0..rows {
            let dst = &mut data[r * w..][..w];
            let src = &self.obs[(t * rows + r) * o..][..o];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(v as f64);
            }
            if t > 0 {
                let prev = self.actions[(t - 1) * rows + r];
                dst[o + prev] = T::one();
            }
            dst[o + k + r % n] = T::one();
        }
        Tensor::new(vec![rows, w], data).expect("input shape")
    }

    /// Slot `t`: observation ⊕ agent id one-hot, `[batch · n, obs + n]`.
    pub fn message_inputs<T: Real>(&self, t: usize) -> Tensor<T> {
        let (n, o) = (self.n_agents, self.obs_dim);
        let rows = self.batch * n;
        let w = self.message_input_dim();
        let mut data = vec![T::zero(); rows * w];
        for r in 0..rows {
            let dst = &mut data[r * w..][..w];
            let src = &self.obs[(t * rows + r) * o..][..o];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(v as f64);
            }
            dst[o + r % n] = T::one();
        }
        Tensor::new(vec![rows, w], data).expect("input shape")
    }

    /// States for slots `from..to`, `[(to − from) · batch, state_dim]`.
    pub fn states_range<T: Real>(&self, from: usize, to: usize) -> Tensor<T> {
        let s = self.state_dim;
        let data: Vec<T> = self.states[from * self.batch * s..to * self.batch * s]
            .iter()
            .map(|&v| T::from_f64_lossy(v as f64))
            .collect();
        Tensor::new(vec![(to - from) * self.batch, s], data).expect("state shape")
    }

    /// Availability for slots `from..to`, agent rows flattened.
    pub fn avail_range(&self, from: usize, to: usize) -> &[bool] {
        let w = self.batch * self.n_agents * self.n_actions;
        &self.avail[from * w..to * w]
    }

    pub fn avail_slot(&self, t: usize) -> &[bool] {
        self.avail_range(t, t + 1)
    }
}

/// Builds an agent-input row exactly as [`EpisodeBatch::agent_inputs`] does.
pub fn agent_input_row(
    obs: &[f32],
    last_action: Option<usize>,
    agent: usize,
    n_actions: usize,
    n_agents: usize,
) -> Vec<f32> {
    let mut row = obs.to_vec();
    row.resize(obs.len() + n_actions + n_agents, 0.0);
    if let Some(a) = last_action {
        row[obs.len() + a] = 1.0;
    }
    row[obs.len() + n_actions + agent] = 1.0;
    row
}

/// Builds a message-input row exactly as [`EpisodeBatch::message_inputs`] does.
pub fn message_input_row(obs: &[f32], agent: usize, n_agents: usize) -> Vec<f32> {
    let mut row = obs.to_vec();
    row.resize(obs.len() + n_agents, 0.0);
    row[obs.len() + agent] = 1.0;
    row
}
