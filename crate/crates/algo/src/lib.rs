//! PAC and the value-factorisation baselines it is compared against.
//!
//! A [`Learner`] owns online and target parameters for one algorithm and
//! performs minibatch updates on padded [`EpisodeBatch`]es; an [`Actor`]
//! turns parameters into joint actions during rollouts. The loss terms live
//! in [`pac`] as free functions over tape variables so they can be tested
//! and gradient-checked in isolation.

mod actor;
pub mod baselines;
mod batch;
mod config;
mod error;
mod learner;
mod model;
pub mod pac;
pub mod selfcheck;

pub use actor::{sample_categorical, uniform_available, ActMode, Actor};
pub use baselines::{vdn_qtot, BaselineKind};
pub use batch::{agent_input_row, message_input_row, Episode, EpisodeBatch};
pub use config::{
    Ablations, Algo, CaForm, EvalActor, LearnerConfig, LossWeights, MessageSource, MixerKind, NetDims, QstarAction,
};
pub use error::{AlgoError, Result};
pub use learner::{Learner, LossBreakdown};
pub use model::{central_evaluator, Forward, Model, Nets, StepValues};
