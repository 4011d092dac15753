//! Function approximators shared by every learner.
//!
//! Networks hold [`ParamId`]s into a [`ParamStore`] and run on a tape after
//! the store has been bound with [`ParamStore::bind`]; forward passes take the
//! bound variable slice. Agents share one set of weights per role and are
//! told apart by an id one-hot in their input.

mod layers;
mod messages;
mod mixers;
mod params;

pub use layers::{AgentNet, GruCell, Linear, Mlp};
pub use messages::{aggregate_for, aggregate_messages, MessageNets};
pub use mixers::{CentralMixer, LinearMixer, MonotonicMixer, QmixMixer};
pub use params::{ParamId, ParamStore};

/// Makes `target` an exact copy of `online`.
pub fn sync_targets(online: &ParamStore, target: &mut ParamStore) {
    target.copy_from(online);
}
