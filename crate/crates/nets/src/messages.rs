use pac_autodiff::{Real, Result, Tape, Tensor, Var};
use rand::Rng;

use crate::layers::Mlp;
use crate::params::{ParamId, ParamStore};

/// Message encoder, action decoder and learned diagonal-Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageNets {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub prior_mu: ParamId,
    pub prior_logvar: ParamId,
    pub msg_dim: usize,
}

impl MessageNets {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        encoder_in: usize,
        decoder_in: usize,
        hidden: usize,
        msg_dim: usize,
        n_actions: usize,
    ) -> Self {
        Self {
            encoder: Mlp::new(store, rng, &format!("{name}.enc"), encoder_in, hidden, msg_dim),
            decoder: Mlp::new(
                store,
                rng,
                &format!("{name}.dec"),
                decoder_in + msg_dim,
                hidden,
                n_actions,
            ),
            prior_mu: store.add(format!("{name}.prior_mu"), Tensor::zeros(&[msg_dim])),
            prior_logvar: store.add(format!("{name}.prior_logvar"), Tensor::zeros(&[msg_dim])),
            msg_dim,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [
            self.encoder.param_ids(),
            self.decoder.param_ids(),
            vec![self.prior_mu, self.prior_logvar],
        ]
        .concat()
    }

    /// Message means `[rows, msg_dim]`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        self.encoder.forward(tape, p, x)
    }

    /// Action logits from `x ⊕ incoming`.
    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var, incoming: Var) -> Result<Var> {
        let input = tape.concat(&[x, incoming], 1)?;
        self.decoder.forward(tape, p, input)
    }
}

/// Mean of the other agents' messages for every receiver. `m` holds
/// `groups × n_agents` rows in agent-minor order; the result has the same
/// layout. A lone agent receives zeros.
pub fn aggregate_messages<T: Real>(tape: &mut Tape<T>, m: Var, n_agents: usize) -> Result<Var> {
    let shape = tape.shape(m).to_vec();
    let (rows, d) = (shape[0], shape[1]);
    if n_agents <= 1 {
        return Ok(tape.constant(Tensor::zeros(&[rows, d])));
    }
    let groups = rows / n_agents;
    let m3 = tape.reshape(m, &[groups, n_agents, d])?;
    let total = tape.sum_axis(m3, 1)?;
    let total = tape.reshape(total, &[groups, 1, d])?;
    let others = tape.sub(total, m3)?;
    let mean = tape.scale(others, 1.0 / (n_agents - 1) as f64)?;
    tape.reshape(mean, &[rows, d])
}

/// Plain-value form of [`aggregate_messages`] for a single receiver.
pub fn aggregate_for(messages: &[Vec<f32>], receiver: usize) -> Vec<f32> {
    let d = messages.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    let senders = messages.len().saturating_sub(1);
    if senders == 0 {
        return out;
    }
    for (j, m) in messages.iter().enumerate() {
        if j != receiver {
            out.iter_mut().zip(m).for_each(|(o, v)| *o += v);
        }
    }
    out.iter_mut().for_each(|o| *o /= senders as f32);
    out
}
