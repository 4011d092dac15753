//! Training loop around the learners in `pac-algo`: episodic replay,
//! ε-scheduled rollouts (optionally on worker threads), greedy evaluation,
//! CSV metrics, matrix-game reports and binary checkpoints.

pub mod buffer;
pub mod checkpoint;
pub mod config;
mod error;
pub mod evaluate;
pub mod heap;
pub mod metrics;
pub mod report;
pub mod rollout;
pub mod schedule;
pub mod train;

pub use buffer::ReplayBuffer;
pub use checkpoint::{load_learner, save_learner, CheckpointError};
pub use config::{EnvConfig, TrainConfig, Variant};
pub use error::{Result, TrainError};
pub use evaluate::{evaluate, EvalSummary};
pub use metrics::{read_metrics, read_metrics_file, MetricsRow, MetricsWriter};
pub use report::{matrix_game_report, MatrixGameReport, StateReport};
pub use rollout::{rollout_episode, RolloutPool};
pub use schedule::EpsilonSchedule;
pub use train::{train, train_to_dir, TrainOutcome, Trainer};
