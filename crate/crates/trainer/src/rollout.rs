use pac_algo::{ActMode, Actor, Episode, Model};
use pac_envs::Env;
use pac_nets::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::config::EnvConfig;
use crate::error::Result;

/// Plays one episode with frozen parameters. The environment is reset with
/// `env_seed`; action noise is drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_episode<R: Rng + ?Sized>(
    env: &mut dyn Env,
    model: &Model,
    params: &ParamStore,
    actor: &mut Actor,
    epsilon: f64,
    mode: ActMode,
    env_seed: u64,
    rng: &mut R,
) -> Result<Episode> {
    let spec = env.spec().clone();
    let mut obs = env.reset(env_seed);
    actor.reset();
    let mut episode = Episode::start(&spec, &obs);
    loop {
        let actions = actor.act(model, params, &obs, epsilon, mode, rng)?;
        let step = env.step(&actions)?;
        episode.push(&actions, &step);
        if step.terminated || step.truncated {
            break;
        }
        obs = step.next;
    }
    episode.stats = env.stats();
    Ok(episode)
}

/// A rollout stream: private environment, actor state and RNG.
pub struct Worker {
    env: Box<dyn Env>,
    actor: Actor,
    rng: ChaCha8Rng,
}

impl Worker {
    pub fn new(env: &EnvConfig, model: &Model, seed: u64) -> Result<Self> {
        Ok(Self {
            env: env.build()?,
            actor: Actor::new(model),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn run(&mut self, model: &Model, params: &ParamStore, epsilon: f64) -> Result<Episode> {
        let env_seed = self.rng.random();
        rollout_episode(
            self.env.as_mut(),
            model,
            params,
            &mut self.actor,
            epsilon,
            ActMode::Explore,
            env_seed,
            &mut self.rng,
        )
    }
}

struct Job {
    params: Arc<ParamStore>,
    epsilon: f64,
}

struct Thread {
    jobs: Option<Sender<Job>>,
    results: Receiver<Result<Episode>>,
    handle: Option<JoinHandle<()>>,
}

/// Collects training episodes. With `threads = 0` a single stream runs on
/// the caller's thread; otherwise each of `threads` streams lives on its
/// own long-running thread and episodes are returned in stream order.
/// Stream `w` is seeded with `seed ^ w`, so one thread reproduces the
/// inline path.
pub struct RolloutPool {
    inline: Option<(Worker, Arc<Model>)>,
    threads: Vec<Thread>,
}

impl RolloutPool {
    pub fn new(env: &EnvConfig, model: &Model, threads: usize, seed: u64) -> Result<Self> {
        let shared = Arc::new(model.clone());
        if threads == 0 {
            return Ok(Self {
                inline: Some((Worker::new(env, model, seed)?, shared)),
                threads: Vec::new(),
            });
        }
        let mut pool = Vec::with_capacity(threads);
        for w in 0..threads as u64 {
            let mut worker = Worker::new(env, model, seed ^ w)?;
            let model = Arc::clone(&shared);
            let (job_tx, job_rx) = channel::<Job>();
            let (res_tx, res_rx) = channel();
            let handle = std::thread::Builder::new()
                .name(format!("rollout-{w}"))
                .spawn(move || {
                    for job in job_rx {
                        let ep = worker.run(&model, &job.params, job.epsilon);
                        if res_tx.send(ep).is_err() {
                            break;
                        }
                    }
                })?;
            pool.push(Thread {
                jobs: Some(job_tx),
                results: res_rx,
                handle: Some(handle),
            });
        }
        Ok(Self {
            inline: None,
            threads: pool,
        })
    }

    /// Episodes produced per [`collect`](Self::collect) call.
    pub fn width(&self) -> usize {
        self.threads.len().max(1)
    }

    pub fn collect(&mut self, params: &ParamStore, epsilon: f64) -> Result<Vec<Episode>> {
        if let Some((worker, model)) = &mut self.inline {
            return Ok(vec![worker.run(model, params, epsilon)?]);
        }
        let snapshot = Arc::new(params.clone());
        for t in &self.threads {
            let job = Job {
                params: Arc::clone(&snapshot),
                epsilon,
            };
            t.jobs
                .as_ref()
                .expect("open job queue")
                .send(job)
                .expect("rollout worker alive");
        }
        self.threads
            .iter()
            .map(|t| t.results.recv().expect("rollout worker alive"))
            .collect()
    }
}

impl Drop for RolloutPool {
    fn drop(&mut self) {
        for t in &mut self.threads {
            t.jobs.take();
            if let Some(h) = t.handle.take() {
                let _ = h.join();
            }
        }
    }
}
