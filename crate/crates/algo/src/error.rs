use pac_autodiff::AutodiffError;
use pac_envs::EnvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("episode does not match the environment: {0}")]
    Episode(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

pub type Result<T> = std::result::Result<T, AlgoError>;
