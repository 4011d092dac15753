use pac_autodiff::{Tape, Tensor, Var};
use pac_envs::Observation;
use pac_nets::ParamStore;
use rand::Rng;

use crate::batch::{agent_input_row, message_input_row};
use crate::config::{Algo, EvalActor};
use crate::error::{AlgoError, Result};
use crate::model::Model;
use crate::pac::masked_argmax;

/// Behaviour during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Training rollouts: ε-uniform over available actions, otherwise a
    /// sample from the policy (PAC) or the greedy utility (baselines).
    Explore,
    /// Evaluation: greedy with respect to the configured actor.
    Greedy,
}

/// Recurrent state of all agents over one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    h_util: Tensor,
    h_policy: Tensor,
    last: Vec<Option<usize>>,
}

/// Uniform draw among available actions.
pub fn uniform_available<R: Rng + ?Sized>(avail: &[bool], rng: &mut R) -> usize {
    let choices: Vec<usize> = (0..avail.len()).filter(|&a| avail[a]).collect();
    choices[rng.random_range(0..choices.len())]
}

/// Draw from a categorical distribution given by `probs`.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            if u < p {
                return i;
            }
            u -= p;
        }
    }
    last
}

impl Actor {
    pub fn new(model: &Model) -> Self {
        let rows = model.n_agents;
        let h = model.cfg.dims.hidden;
        Self {
            h_util: Tensor::zeros(&[rows, h]),
            h_policy: Tensor::zeros(&[rows, h]),
            last: vec![None; rows],
        }
    }

    pub fn reset(&mut self) {
        self.h_util.data_mut().fill(0.0);
        self.h_policy.data_mut().fill(0.0);
        self.last.fill(None);
    }

    fn inputs(&self, model: &Model, obs: &Observation) -> Tensor {
        let (n, k, o) = (model.n_agents, model.n_actions, model.obs_dim);
        let data: Vec<f32> = (0..n)
            .flat_map(|i| agent_input_row(&obs.obs[i * o..][..o], self.last[i], i, k, n))
            .collect();
        Tensor::new(vec![n, model.agent_input_dim()], data).expect("input shape")
    }

    /// Policy log-probabilities `[n, K]` for the current step.
    fn policy_step(&mut self, model: &Model, params: &ParamStore, obs: &Observation) -> Result<Vec<f64>> {
        let policy = model
            .nets
            .policy
            .as_ref()
            .ok_or_else(|| AlgoError::Config("learner has no policy network".into()))?;
        let mut tape = Tape::new();
        let p = params.bind_only(&mut tape, &policy.param_ids(), false);
        let x = tape.constant(self.inputs(model, obs));
        let h = tape.constant(self.h_policy.clone());
        let (logits, h2) = policy.forward(&mut tape, &p, x, h)?;
        let logp = tape.masked_log_softmax(logits, &obs.avail)?;
        self.h_policy = tape.value(h2).clone();
        Ok(tape.value(logp).to_f64_vec())
    }

    /// Utilities `[n, K]`, conditioned on message means when the learner
    /// uses messages.
    fn utility_step(&mut self, model: &Model, params: &ParamStore, obs: &Observation) -> Result<Vec<f64>> {
        let (n, o) = (model.n_agents, model.obs_dim);
        let mut tape = Tape::new();
        let p = params.bind_only(&mut tape, &model.utility_param_ids(), false);
        let x = tape.constant(self.inputs(model, obs));
        let input: Var = match &model.nets.messages {
            Some(msg) => {
                let rows: Vec<f32> = (0..n)
                    .flat_map(|i| message_input_row(&obs.obs[i * o..][..o], i, n))
                    .collect();
                let e = tape.constant(Tensor::new(vec![n, model.message_input_dim()], rows)?);
                let mu = msg.encode(&mut tape, &p, e)?;
                let inc = model.incoming(&mut tape, mu)?;
                tape.concat(&[x, inc], 1)?
            }
            None => x,
        };
        let h = tape.constant(self.h_util.clone());
        let (q, h2) = model.nets.util.forward(&mut tape, &p, input, h)?;
        self.h_util = tape.value(h2).clone();
        Ok(tape.value(q).to_f64_vec())
    }

    /// Joint action for the current decision point.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        model: &Model,
        params: &ParamStore,
        obs: &Observation,
        epsilon: f64,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let (n, k) = (model.n_agents, model.n_actions);
        let pac = model.cfg.algo == Algo::Pac;
        let use_policy = pac && (mode == ActMode::Explore || model.cfg.eval_actor == EvalActor::Policy);
        let values = if use_policy {
            self.policy_step(model, params, obs)?
        } else {
            self.utility_step(model, params, obs)?
        };
        let greedy = masked_argmax(&values, &obs.avail, k);

        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let avail = &obs.avail[i * k..][..k];
            let explore = rng.random::<f64>() < epsilon;
            let a = if explore {
                uniform_available(avail, rng)
            } else if use_policy && mode == ActMode::Explore {
                let probs: Vec<f64> = values[i * k..][..k]
                    .iter()
                    .zip(avail)
                    .map(|(&l, &ok)| if ok { l.exp() } else { 0.0 })
                    .collect();
                sample_categorical(&probs, rng)
            } else {
                greedy[i]
            };
            actions.push(a);
        }
        for (l, &a) in self.last.iter_mut().zip(&actions) {
            *l = Some(a);
        }
        Ok(actions)
    }
}
