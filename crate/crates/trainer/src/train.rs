use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use pac_algo::{Algo, EpisodeBatch, Learner, LossBreakdown};
use pac_envs::Env;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::buffer::ReplayBuffer;
use crate::checkpoint::save_learner;
use crate::config::TrainConfig;
use crate::error::Result;
use crate::evaluate::{evaluate, EvalSummary};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::rollout::RolloutPool;
use crate::schedule::EpsilonSchedule;

const INIT_STREAM: u64 = 1;
const LEARN_STREAM: u64 = 2;
const EVAL_SALT: u64 = 0x5eed_e7a1;

/// Parameter initialisation for a seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    rng
}

/// Seed of the fixed evaluation episodes of a run.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ EVAL_SALT
}

#[derive(Debug, Default)]
struct Accumulator {
    n: usize,
    sums: [f64; 6],
    counts: [usize; 6],
    entropy: (f64, usize),
}

impl Accumulator {
    fn add(&mut self, l: &LossBreakdown) {
        self.n += 1;
        let terms = [l.l_lp, l.l_ca, l.l_ib, l.l_qstar, l.l_qtot, l.l_alpha];
        for (i, t) in terms.iter().enumerate() {
            if let Some(v) = t {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
        if let Some(h) = l.entropy {
            self.entropy.0 += h;
            self.entropy.1 += 1;
        }
    }

    fn mean(&self, i: usize) -> Option<f64> {
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    fn fill(&self, row: &mut MetricsRow) {
        row.l_lp = self.mean(0);
        row.l_ca = self.mean(1);
        row.l_ib = self.mean(2);
        row.l_qstar = self.mean(3);
        row.l_qtot = self.mean(4);
        row.l_alpha = self.mean(5);
        row.policy_entropy = (self.entropy.1 > 0).then(|| self.entropy.0 / self.entropy.1 as f64);
    }
}

/// Result of a finished run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub learner: Learner,
    pub env_steps: u64,
    pub episodes: u64,
}

/// Interleaves collection and learning: every collected episode enters the
/// buffer and, once a full minibatch is stored, triggers
/// `updates_per_episode` updates. Targets follow the online networks every
/// `target_update_interval` episodes; a greedy evaluation is logged every
/// `eval_interval` environment steps (and at the start and end).
pub struct Trainer<'w, W: Write> {
    cfg: TrainConfig,
    learner: Learner,
    buffer: ReplayBuffer,
    pool: RolloutPool,
    eval_env: Box<dyn Env>,
    rng: ChaCha8Rng,
    schedule: EpsilonSchedule,
    env_steps: u64,
    episodes: u64,
    acc: Accumulator,
    rows: Vec<MetricsRow>,
    sink: Option<&'w mut MetricsWriter<W>>,
    started: Instant,
}

impl<'w, W: Write> Trainer<'w, W> {
    pub fn new(cfg: &TrainConfig, sink: Option<&'w mut MetricsWriter<W>>) -> Result<Self> {
        cfg.validate()?;
        crate::heap::retain_freed_memory();
        let spec = cfg.env.spec()?;
        let learner = Learner::new(cfg.learner.clone(), &spec, &mut init_rng(cfg.seed))?;
        let pool = RolloutPool::new(&cfg.env, &learner.model, cfg.workers, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(LEARN_STREAM);
        Ok(Self {
            learner,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            pool,
            eval_env: cfg.env.build()?,
            rng,
            schedule: EpsilonSchedule {
                start: cfg.epsilon_start,
                end: cfg.epsilon_end,
                anneal_steps: cfg.epsilon_anneal_steps,
            },
            env_steps: 0,
            episodes: 0,
            acc: Accumulator::default(),
            rows: Vec::new(),
            sink,
            started: Instant::now(),
            cfg: cfg.clone(),
        })
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    fn evaluate(&mut self) -> Result<EvalSummary> {
        let seed = eval_seed(self.cfg.seed);
        evaluate(
            self.eval_env.as_mut(),
            &self.learner.model,
            &self.learner.params,
            self.cfg.eval_episodes,
            seed,
        )
    }

    fn log(&mut self, eval: Option<EvalSummary>) -> Result<()> {
        let mut row = MetricsRow {
            env_steps: self.env_steps,
            episodes: self.episodes,
            epsilon: Some(self.schedule.value(self.env_steps)),
            ..MetricsRow::default()
        };
        if let Some(e) = eval {
            row.test_return_mean = e.return_mean;
            row.test_return_std = e.return_std;
            row.test_win_rate = e.win_rate;
            row.capture_count = e.captures_mean;
        }
        self.acc.fill(&mut row);
        if self.learner.cfg().algo == Algo::Pac {
            row.alpha = Some(self.learner.alpha());
        }
        if self.cfg.log_wall_clock {
            row.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        }
        self.acc = Accumulator::default();
        if let Some(sink) = self.sink.as_deref_mut() {
            sink.write(&row)?;
        }
        self.rows.push(row);
        Ok(())
    }

    fn learn(&mut self) -> Result<()> {
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(());
        }
        for _ in 0..self.cfg.updates_per_episode {
            let sample = self
                .buffer
                .sample(self.cfg.batch_size, &mut self.rng)
                .expect("buffer holds a batch");
            let batch = EpisodeBatch::from_episodes(&sample)?;
            let out = self.learner.update(&batch, &mut self.rng)?;
            self.acc.add(&out);
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let eval = self.evaluate()?;
        self.log(Some(eval))?;
        let (eval_every, log_every) = (self.cfg.eval_interval, self.cfg.log_interval);
        let mut next_eval = eval_every;
        let mut next_log = if log_every > 0 { log_every } else { u64::MAX };
        while self.env_steps < self.cfg.total_env_steps {
            let eps = self.schedule.value(self.env_steps);
            let collected = self.pool.collect(&self.learner.params, eps)?;
            for ep in collected {
                self.env_steps += ep.len as u64;
                self.episodes += 1;
                self.buffer.push(ep);
                self.learn()?;
                if self.episodes.is_multiple_of(self.cfg.target_update_interval) {
                    self.learner.sync_targets();
                }
            }
            let done = self.env_steps >= self.cfg.total_env_steps;
            if self.env_steps >= next_eval || done {
                while next_eval <= self.env_steps {
                    next_eval += eval_every;
                }
                let eval = self.evaluate()?;
                self.log(Some(eval))?;
            } else if self.env_steps >= next_log {
                self.log(None)?;
            }
            while next_log <= self.env_steps {
                next_log = next_log.saturating_add(log_every);
            }
        }
        Ok(TrainOutcome {
            rows: self.rows,
            learner: self.learner,
            env_steps: self.env_steps,
            episodes: self.episodes,
        })
    }
}

/// Trains without writing files.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::<Vec<u8>>::new(cfg, None)?.run()
}

/// Trains into `out`, leaving `metrics.csv`, `final.ckpt` and
/// `config.resolved` there.
pub fn train_to_dir(cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved"), cfg.to_toml()?)?;
    let mut writer = MetricsWriter::create(&out.join("metrics.csv"))?;
    let outcome = Trainer::new(cfg, Some(&mut writer))?.run()?;
    save_learner(&out.join("final.ckpt"), &outcome.learner)?;
    Ok(outcome)
}
