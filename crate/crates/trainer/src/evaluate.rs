use pac_algo::{ActMode, Actor, Model};
use pac_envs::Env;
use pac_nets::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rollout::rollout_episode;

/// Greedy-evaluation statistics. Everything is `None` for zero episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub return_mean: Option<f64>,
    /// Population standard deviation.
    pub return_std: Option<f64>,
    /// Only for environments with a win condition.
    pub win_rate: Option<f64>,
    /// Mean captures per episode, where counted.
    pub captures_mean: Option<f64>,
}

/// Runs `n` greedy episodes (ε = 0); episode seeds derive from `seed`.
pub fn evaluate(env: &mut dyn Env, model: &Model, params: &ParamStore, n: usize, seed: u64) -> Result<EvalSummary> {
    let mut summary = EvalSummary {
        episodes: n,
        ..EvalSummary::default()
    };
    if n == 0 {
        return Ok(summary);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = Actor::new(model);
    let mut returns = Vec::with_capacity(n);
    let (mut wins, mut win_defined) = (0usize, false);
    let (mut captures, mut captures_defined) = (0u64, false);
    for _ in 0..n {
        let env_seed = rng.random();
        let ep = rollout_episode(env, model, params, &mut actor, 0.0, ActMode::Greedy, env_seed, &mut rng)?;
        returns.push(ep.rewards.iter().map(|&r| r as f64).sum::<f64>());
        if let Some(w) = ep.stats.won {
            win_defined = true;
            wins += w as usize;
        }
        if let Some(c) = ep.stats.captures {
            captures_defined = true;
            captures += c as u64;
        }
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    summary.return_mean = Some(mean);
    summary.return_std = Some(var.sqrt());
    let has_win = env.spec().has_win_condition || win_defined;
    summary.win_rate = has_win.then(|| wins as f64 / n as f64);
    summary.captures_mean = captures_defined.then(|| captures as f64 / n as f64);
    Ok(summary)
}
