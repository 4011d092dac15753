use std::collections::BTreeMap;
use std::fmt::Write as _;

use pac_algo::{ActMode, Actor, Learner};
use pac_envs::{MatrixGame, MatrixGameConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TrainError};

/// Learned values in one state of the matrix game. Grids are indexed
/// `[u₁][u₂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateReport {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q_tot: Vec<Vec<f64>>,
    pub qstar: Option<Vec<Vec<f64>>>,
    pub greedy: (usize, usize),
    pub greedy_payoff: f64,
    pub optimal_payoff: f64,
}

impl StateReport {
    pub fn greedy_is_optimal(&self) -> bool {
        self.greedy_payoff == self.optimal_payoff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGameReport {
    pub algo: String,
    pub states: Vec<StateReport>,
}

/// Tabulates what a learner has made of the matrix game: utilities,
/// mixed values, critic values and the greedy joint action per state.
pub fn matrix_game_report(learner: &Learner, game: &MatrixGameConfig) -> Result<MatrixGameReport> {
    let model = &learner.model;
    if (model.n_agents, model.n_actions, model.obs_dim, model.state_dim) != (2, 3, 2, 2) {
        return Err(TrainError::Report(format!(
            "learner shape (n, K, obs, state) = ({}, {}, {}, {}) is not the matrix game's",
            model.n_agents, model.n_actions, model.obs_dim, model.state_dim
        )));
    }
    let k = model.n_actions;
    let mut states = Vec::new();
    for s in 0..MatrixGame::N_STATES {
        let obs = MatrixGame::observation_for(s);
        let values = model.initial_values(&learner.params, &obs)?;
        let (q1, q2) = values.utilities.split_at(k);
        let joint: Vec<f64> = (0..k * k).flat_map(|c| [q1[c / k], q2[c % k]]).collect();
        let state: Vec<f64> = (0..k * k).flat_map(|_| obs.state.iter().map(|&x| x as f64)).collect();
        let grid = |flat: Vec<f64>| flat.chunks(k).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let q_tot = grid(model.mix(&learner.params, &state, &joint, k * k, false)?);
        let qstar = match &values.qstar {
            Some(qs) => {
                let joint: Vec<f64> = (0..k * k).flat_map(|c| [qs[c / k], qs[k + c % k]]).collect();
                Some(grid(model.mix(&learner.params, &state, &joint, k * k, true)?))
            }
            None => None,
        };
        let mut actor = Actor::new(model);
        let a = actor.act(
            model,
            &learner.params,
            &obs,
            0.0,
            ActMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let payoff = game.payoff(s);
        states.push(StateReport {
            q1: q1.to_vec(),
            q2: q2.to_vec(),
            q_tot,
            qstar,
            greedy: (a[0], a[1]),
            greedy_payoff: payoff[a[0]][a[1]] as f64,
            optimal_payoff: payoff.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64)),
        });
    }
    Ok(MatrixGameReport {
        algo: learner.cfg().algo.name().to_string(),
        states,
    })
}

const VALUES_MARKER: &str = "[values]";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn table(out: &mut String, title: &str, grid: &[Vec<f64>], rows: Option<&[f64]>, cols: Option<&[f64]>) {
    let k = grid.len();
    let _ = write!(out, "{title:<8}|");
    for j in 0..k {
        let _ = write!(out, "{:>7}", format!("a{}", j + 1));
    }
    if rows.is_some() {
        let _ = write!(out, " |{:>7}", "q1");
    }
    out.push('\n');
    for (i, row) in grid.iter().enumerate() {
        let _ = write!(out, "{:<8}|", format!("a{}", i + 1));
        for v in row {
            let _ = write!(out, "{v:>7.1}");
        }
        if let Some(r) = rows {
            let _ = write!(out, " |{:>7.1}", r[i]);
        }
        out.push('\n');
    }
    if let Some(c) = cols {
        let _ = write!(out, "{:<8}|", "q2");
        for v in c {
            let _ = write!(out, "{v:>7.1}");
        }
        out.push('\n');
    }
}

impl MatrixGameReport {
    /// Human-readable tables followed by a `key = value` block.
    pub fn render(&self) -> String {
        let mut out = format!("matrix game report: {}\n", self.algo);
        for (s, st) in self.states.iter().enumerate() {
            let _ = writeln!(out, "\nstate s{}", s + 1);
            table(&mut out, "Q_tot", &st.q_tot, Some(&st.q1), Some(&st.q2));
            if let Some(qs) = &st.qstar {
                out.push('\n');
                table(&mut out, "Q*", qs, None, None);
            }
            let _ = writeln!(
                out,
                "greedy (a{}, a{}) payoff {:.1} of {:.1}",
                st.greedy.0 + 1,
                st.greedy.1 + 1,
                st.greedy_payoff,
                st.optimal_payoff
            );
        }
        let _ = writeln!(out, "\n{VALUES_MARKER}");
        let _ = writeln!(out, "algo = {}", self.algo);
        let _ = writeln!(out, "n_states = {}", self.states.len());
        for (s, st) in self.states.iter().enumerate() {
            let p = format!("s{}", s + 1);
            let _ = writeln!(out, "{p}.q1 = {}", join(&st.q1));
            let _ = writeln!(out, "{p}.q2 = {}", join(&st.q2));
            let _ = writeln!(out, "{p}.q_tot = {}", join(&st.q_tot.concat()));
            if let Some(qs) = &st.qstar {
                let _ = writeln!(out, "{p}.qstar = {}", join(&qs.concat()));
            }
            let _ = writeln!(out, "{p}.greedy = {} {}", st.greedy.0, st.greedy.1);
            let _ = writeln!(out, "{p}.greedy_payoff = {}", st.greedy_payoff);
            let _ = writeln!(out, "{p}.optimal_payoff = {}", st.optimal_payoff);
        }
        out
    }

    /// Reads back the `key = value` block of [`render`](Self::render).
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| TrainError::Report(m);
        let block = text
            .split_once(&format!("{VALUES_MARKER}\n"))
            .ok_or_else(|| bad("missing values block".into()))?
            .1;
        let mut kv = BTreeMap::new();
        for line in block.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
        let nums = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| bad(format!("{k}: {e}"))))
                .collect()
        };
        let n_states: usize = get("n_states")?.parse().map_err(|e| bad(format!("n_states: {e}")))?;
        let mut states = Vec::with_capacity(n_states);
        for s in 1..=n_states {
            let p = format!("s{s}");
            let q1 = nums(&format!("{p}.q1"))?;
            let q2 = nums(&format!("{p}.q2"))?;
            let k = q1.len();
            if k == 0 || q2.len() != k {
                return Err(bad(format!("{p}: utility lengths {} and {}", k, q2.len())));
            }
            let grid = |flat: Vec<f64>, key: &str| -> Result<Vec<Vec<f64>>> {
                if flat.len() != k * k {
                    return Err(bad(format!("{key}: expected {} values, found {}", k * k, flat.len())));
                }
                Ok(flat.chunks(k).map(<[f64]>::to_vec).collect())
            };
            let q_tot = grid(nums(&format!("{p}.q_tot"))?, "q_tot")?;
            let qstar_key = format!("{p}.qstar");
            let qstar = match kv.contains_key(&qstar_key) {
                true => Some(grid(nums(&qstar_key)?, "qstar")?),
                false => None,
            };
            let g = nums(&format!("{p}.greedy"))?;
            if g.len() != 2 || g.iter().any(|&a| a < 0.0 || a.fract() != 0.0 || a as usize >= k) {
                return Err(bad(format!("{p}.greedy must be two action indices")));
            }
            let scalar = |key: String| -> Result<f64> {
                match nums(&key)?.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(bad(format!("{key} must be a single number"))),
                }
            };
            states.push(StateReport {
                q1,
                q2,
                q_tot,
                qstar,
                greedy: (g[0] as usize, g[1] as usize),
                greedy_payoff: scalar(format!("{p}.greedy_payoff"))?,
                optimal_payoff: scalar(format!("{p}.optimal_payoff"))?,
            });
        }
        Ok(Self {
            algo: get("algo")?.clone(),
            states,
        })
    }
}
