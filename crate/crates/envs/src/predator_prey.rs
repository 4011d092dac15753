use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{check_actions, Env, EnvError, EnvSpec, EpisodeStats, Observation, StepResult};

pub const STAY: usize = 0;
pub const NORTH: usize = 1;
pub const SOUTH: usize = 2;
pub const WEST: usize = 3;
pub const EAST: usize = 4;
pub const CATCH: usize = 5;

const N_ACTIONS: usize = 6;
const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredatorPreyConfig {
    pub width: usize,
    pub height: usize,
    pub n_predators: usize,
    pub n_prey: usize,
    pub obs_window: usize,
    pub capture_reward: f32,
    pub miscapture_penalty: f32,
    pub episode_limit: usize,
    /// Mixed into the episode seed to drive prey movement.
    pub prey_seed: u64,
}

impl Default for PredatorPreyConfig {
    fn default() -> Self {
        Self::paper(0.0)
    }
}

impl PredatorPreyConfig {
    /// 10×10 grid, 8 predators, 8 prey, 200 steps.
    pub fn paper(penalty: f32) -> Self {
        Self {
            width: 10,
            height: 10,
            n_predators: 8,
            n_prey: 8,
            obs_window: 5,
            capture_reward: 10.0,
            miscapture_penalty: penalty,
            episode_limit: 200,
            prey_seed: 0,
        }
    }

    /// 7×7 grid, 4 predators, 4 prey, 100 steps.
    pub fn desk(penalty: f32) -> Self {
        Self {
            width: 7,
            height: 7,
            n_predators: 4,
            n_prey: 4,
            episode_limit: 100,
            ..Self::paper(penalty)
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("grid extents must be positive");
        }
        if self.n_predators == 0 || self.n_prey == 0 {
            return bad("need at least one predator and one prey");
        }
        if self.n_predators + self.n_prey > self.width * self.height {
            return bad("predators and prey do not fit on the grid");
        }
        if self.obs_window.is_multiple_of(2) {
            return bad("obs_window must be odd");
        }
        if self.episode_limit == 0 {
            return bad("episode_limit must be at least 1");
        }
        if !self.capture_reward.is_finite() || !self.miscapture_penalty.is_finite() {
            return bad("rewards must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Empty,
    Predator,
    Prey,
}

/// Grid hunt: two adjacent predators must choose `CATCH` on the same step to
/// capture a prey, after which the prey and both catchers leave the grid.
#[derive(Debug, Clone)]
pub struct PredatorPrey {
    config: PredatorPreyConfig,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    prey_rng: ChaCha8Rng,
    grid: Vec<Cell>,
    predators: Vec<Option<(usize, usize)>>,
    prey: Vec<Option<(usize, usize)>>,
    captures: u32,
    t: usize,
    done: bool,
}

impl PredatorPrey {
    pub fn new(config: PredatorPreyConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let cells = config.width * config.height;
        let spec = EnvSpec {
            n_agents: config.n_predators,
            n_actions: N_ACTIONS,
            obs_dim: 2 * config.obs_window * config.obs_window,
            state_dim: 2 * cells,
            episode_limit: config.episode_limit,
            has_win_condition: false,
        };
        Ok(Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(0),
            prey_rng: ChaCha8Rng::seed_from_u64(0),
            grid: vec![Cell::Empty; cells],
            predators: vec![None; config.n_predators],
            prey: vec![None; config.n_prey],
            captures: 0,
            t: 0,
            done: true,
            config,
        })
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.config
    }

    pub fn predator_positions(&self) -> &[Option<(usize, usize)>] {
        &self.predators
    }

    pub fn prey_positions(&self) -> &[Option<(usize, usize)>] {
        &self.prey
    }

    /// Places agents explicitly; `None` marks a removed agent. Used to build
    /// fixtures.
    pub fn set_positions(
        &mut self,
        predators: &[Option<(usize, usize)>],
        prey: &[Option<(usize, usize)>],
    ) -> Result<Observation, EnvError> {
        if predators.len() != self.config.n_predators || prey.len() != self.config.n_prey {
            return Err(EnvError::InvalidConfig("position list length mismatch".into()));
        }
        self.grid.iter_mut().for_each(|c| *c = Cell::Empty);
        for (list, kind) in [(predators, Cell::Predator), (prey, Cell::Prey)] {
            for &(r, c) in list.iter().flatten() {
                if r >= self.config.height || c >= self.config.width {
                    return Err(EnvError::InvalidConfig(format!("cell ({r}, {c}) is off the grid")));
                }
                let i = self.idx(r, c);
                if self.grid[i] != Cell::Empty {
                    return Err(EnvError::InvalidConfig(format!("cell ({r}, {c}) is occupied twice")));
                }
                self.grid[i] = kind;
            }
        }
        self.predators = predators.to_vec();
        self.prey = prey.to_vec();
        self.done = false;
        Ok(self.observation())
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.config.width + c
    }

    fn offset(&self, (r, c): (usize, usize), (dr, dc): (isize, isize)) -> Option<(usize, usize)> {
        let nr = r.checked_add_signed(dr)?;
        let nc = c.checked_add_signed(dc)?;
        (nr < self.config.height && nc < self.config.width).then_some((nr, nc))
    }

    fn free(&self, pos: Option<(usize, usize)>) -> Option<(usize, usize)> {
        pos.filter(|&(r, c)| self.grid[self.idx(r, c)] == Cell::Empty)
    }

    fn adjacent_prey(&self, pos: (usize, usize)) -> Vec<usize> {
        self.prey
            .iter()
            .enumerate()
            .filter_map(|(j, p)| {
                let (pr, pc) = (*p)?;
                (pr.abs_diff(pos.0) + pc.abs_diff(pos.1) == 1).then_some(j)
            })
            .collect()
    }

    pub fn avail_actions(&self) -> Vec<bool> {
        let mut mask = vec![false; self.config.n_predators * N_ACTIONS];
        for (i, p) in self.predators.iter().enumerate() {
            let row = &mut mask[i * N_ACTIONS..(i + 1) * N_ACTIONS];
            row[STAY] = true;
            let Some(pos) = *p else { continue };
            for (k, &d) in DIRS.iter().enumerate() {
                row[NORTH + k] = self.free(self.offset(pos, d)).is_some();
            }
            row[CATCH] = !self.adjacent_prey(pos).is_empty();
        }
        mask
    }

    pub fn observe(&self, agent: usize) -> Vec<f32> {
        let w = self.config.obs_window;
        let mut out = vec![0.0; 2 * w * w];
        let Some((r, c)) = self.predators[agent] else {
            return out;
        };
        let half = (w / 2) as isize;
        for wr in 0..w {
            for wc in 0..w {
                let d = (wr as isize - half, wc as isize - half);
                let k = wr * w + wc;
                match self.offset((r, c), d) {
                    None => {
                        out[k] = -1.0;
                        out[w * w + k] = -1.0;
                    }
                    Some((gr, gc)) => match self.grid[self.idx(gr, gc)] {
                        Cell::Predator => out[k] = 1.0,
                        Cell::Prey => out[w * w + k] = 1.0,
                        Cell::Empty => {}
                    },
                }
            }
        }
        out
    }

    fn state(&self) -> Vec<f32> {
        let cells = self.grid.len();
        let mut s = vec![0.0; 2 * cells];
        for (i, c) in self.grid.iter().enumerate() {
            match c {
                Cell::Predator => s[i] = 1.0,
                Cell::Prey => s[cells + i] = 1.0,
                Cell::Empty => {}
            }
        }
        s
    }

    fn remove_predator(&mut self, i: usize) {
        if let Some((r, c)) = self.predators[i].take() {
            let k = self.idx(r, c);
            self.grid[k] = Cell::Empty;
        }
    }

    fn move_prey(&mut self) {
        for j in 0..self.prey.len() {
            let Some(pos) = self.prey[j] else { continue };
            let mut options = vec![pos];
            options.extend(DIRS.iter().filter_map(|&d| self.free(self.offset(pos, d))));
            let to = options[self.prey_rng.random_range(0..options.len())];
            if to != pos {
                let (a, b) = (self.idx(pos.0, pos.1), self.idx(to.0, to.1));
                self.grid[a] = Cell::Empty;
                self.grid[b] = Cell::Prey;
                self.prey[j] = Some(to);
            }
        }
    }
}

impl Env for PredatorPrey {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.prey_rng = ChaCha8Rng::seed_from_u64(seed ^ self.config.prey_seed.rotate_left(32) ^ 0x9e37_79b9);
        let (np, nq) = (self.config.n_predators, self.config.n_prey);
        let cells = index::sample(&mut self.rng, self.grid.len(), np + nq).into_vec();
        let at = |k: usize| Some((k / self.config.width, k % self.config.width));
        let predators: Vec<_> = cells[..np].iter().map(|&k| at(k)).collect();
        let prey: Vec<_> = cells[np..].iter().map(|&k| at(k)).collect();
        self.captures = 0;
        self.t = 0;
        self.set_positions(&predators, &prey)
            .expect("sampled cells are distinct and on the grid")
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        check_actions(&self.spec, &self.avail_actions(), actions)?;

        let mut order: Vec<usize> = (0..self.predators.len())
            .filter(|&i| self.predators[i].is_some())
            .collect();
        order.shuffle(&mut self.rng);
        for &i in &order {
            let a = actions[i];
            if !(NORTH..=EAST).contains(&a) {
                continue;
            }
            let pos = self.predators[i].expect("live predator");
            if let Some(to) = self.free(self.offset(pos, DIRS[a - NORTH])) {
                let (from, dest) = (self.idx(pos.0, pos.1), self.idx(to.0, to.1));
                self.grid[from] = Cell::Empty;
                self.grid[dest] = Cell::Predator;
                self.predators[i] = Some(to);
            }
        }

        let catchers: Vec<usize> = (0..self.predators.len())
            .filter(|&i| actions[i] == CATCH && self.predators[i].is_some())
            .collect();
        let adjacency: Vec<Vec<usize>> = catchers
            .iter()
            .map(|&i| self.adjacent_prey(self.predators[i].expect("live catcher")))
            .collect();
        let mut reward = 0.0;
        let mut removed = vec![false; self.predators.len()];
        let mut captured = vec![false; self.prey.len()];
        for j in 0..self.prey.len() {
            if self.prey[j].is_none() {
                continue;
            }
            let ready: Vec<usize> = catchers
                .iter()
                .zip(&adjacency)
                .filter(|(&i, adj)| !removed[i] && adj.contains(&j))
                .map(|(&i, _)| i)
                .collect();
            if ready.len() >= 2 {
                captured[j] = true;
                removed[ready[0]] = true;
                removed[ready[1]] = true;
                reward += self.config.capture_reward;
            }
        }
        for (&i, adj) in catchers.iter().zip(&adjacency) {
            if !removed[i] && !adj.iter().any(|&j| captured[j]) {
                reward += self.config.miscapture_penalty;
            }
        }
        for (i, &gone) in removed.iter().enumerate() {
            if gone {
                self.remove_predator(i);
            }
        }
        for (j, &gone) in captured.iter().enumerate() {
            if gone {
                let (r, c) = self.prey[j].take().expect("captured prey was live");
                let k = self.idx(r, c);
                self.grid[k] = Cell::Empty;
                self.captures += 1;
            }
        }

        self.move_prey();

        self.t += 1;
        let terminated = self.predators.iter().all(Option::is_none) || self.prey.iter().all(Option::is_none);
        let truncated = !terminated && self.t >= self.config.episode_limit;
        self.done = terminated || truncated;
        Ok(StepResult {
            reward,
            terminated,
            truncated,
            next: self.observation(),
        })
    }

    fn observation(&self) -> Observation {
        Observation {
            state: self.state(),
            obs: (0..self.predators.len()).flat_map(|i| self.observe(i)).collect(),
            avail: self.avail_actions(),
        }
    }

    fn stats(&self) -> EpisodeStats {
        EpisodeStats {
            won: None,
            captures: Some(self.captures),
        }
    }
}
