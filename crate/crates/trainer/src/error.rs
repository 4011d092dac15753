use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Algo(#[from] pac_algo::AlgoError),
    #[error(transparent)]
    Env(#[from] pac_envs::EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Whether the error stems from the configuration rather than from
    /// running it.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            TrainError::Config(_) | TrainError::Algo(pac_algo::AlgoError::Config(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
