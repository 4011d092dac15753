use pac_autodiff::{Real, Result, Tape, Var};
use rand::Rng;

use crate::layers::{Linear, Mlp};
use crate::params::{ParamId, ParamStore};

/// State-conditioned hypernetwork mixer with absolute-valued weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixMixer {
    pub hyper_w1: Mlp,
    pub hyper_b1: Linear,
    pub hyper_w2: Mlp,
    pub value: Mlp,
    pub n_agents: usize,
    pub embed: usize,
}

impl QmixMixer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        state_dim: usize,
        n_agents: usize,
        embed: usize,
        hyper_hidden: usize,
    ) -> Self {
        Self {
            hyper_w1: Mlp::new(
                store,
                rng,
                &format!("{name}.hyper_w1"),
                state_dim,
                hyper_hidden,
                n_agents * embed,
            ),
            hyper_b1: Linear::new(store, rng, &format!("{name}.hyper_b1"), state_dim, embed),
            hyper_w2: Mlp::new(store, rng, &format!("{name}.hyper_w2"), state_dim, hyper_hidden, embed),
            value: Mlp::new(store, rng, &format!("{name}.value"), state_dim, embed, 1),
            n_agents,
            embed,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [
            self.hyper_w1.param_ids(),
            self.hyper_b1.param_ids(),
            self.hyper_w2.param_ids(),
            self.value.param_ids(),
        ]
        .concat()
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], state: Var, q: Var) -> Result<Var> {
        let rows = tape.shape(q)[0];
        let (n, e) = (self.n_agents, self.embed);
        let w1 = self.hyper_w1.forward(tape, p, state)?;
        let w1 = tape.abs(w1)?;
        let w1 = tape.reshape(w1, &[rows, n, e])?;
        let q3 = tape.reshape(q, &[rows, n, 1])?;
        let h = tape.mul(q3, w1)?;
        let h = tape.sum_axis(h, 1)?;
        let b1 = self.hyper_b1.forward(tape, p, state)?;
        let h = tape.add(h, b1)?;
        let h = tape.elu(h)?;
        let w2 = self.hyper_w2.forward(tape, p, state)?;
        let w2 = tape.abs(w2)?;
        let y = tape.mul(h, w2)?;
        let y = tape.sum_axis(y, 1)?;
        let y = tape.reshape(y, &[rows, 1])?;
        let v = self.value.forward(tape, p, state)?;
        tape.add(y, v)
    }
}

/// `Q_tot = Σᵢ kᵢ(s) qᵢ + b(s)` with `k = |W_k s + c_k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMixer {
    pub k: Linear,
    pub b: Linear,
}

impl LinearMixer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        state_dim: usize,
        n_agents: usize,
    ) -> Self {
        Self {
            k: Linear::new(store, rng, &format!("{name}.k"), state_dim, n_agents),
            b: Linear::new(store, rng, &format!("{name}.b"), state_dim, 1),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.k.param_ids(), self.b.param_ids()].concat()
    }

    /// Per-agent weights `k(s)`, `[rows, n_agents]`.
    pub fn weights<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], state: Var) -> Result<Var> {
        let k = self.k.forward(tape, p, state)?;
        tape.abs(k)
    }

    /// Unit weights and zero bias, so the mixer sums its inputs.
    pub fn set_identity(&self, store: &mut ParamStore) {
        self.k.set_constant(store, 1.0);
        self.b.set_constant(store, 0.0);
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], state: Var, q: Var) -> Result<Var> {
        let rows = tape.shape(q)[0];
        let k = self.weights(tape, p, state)?;
        let kq = tape.mul(k, q)?;
        let s = tape.sum_axis(kq, 1)?;
        let s = tape.reshape(s, &[rows, 1])?;
        let b = self.b.forward(tape, p, state)?;
        tape.add(s, b)
    }
}

/// Monotonic combiners of per-agent utilities.
#[derive(Debug, Clone, PartialEq)]
pub enum MonotonicMixer {
    Qmix(QmixMixer),
    Linear(LinearMixer),
    /// Parameter-free sum.
    Vdn {
        n_agents: usize,
    },
}

impl MonotonicMixer {
    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Self::Qmix(m) => m.param_ids(),
            Self::Linear(m) => m.param_ids(),
            Self::Vdn { .. } => Vec::new(),
        }
    }

    /// `state [rows, S]`, `q [rows, n_agents]` → `[rows, 1]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], state: Var, q: Var) -> Result<Var> {
        match self {
            Self::Qmix(m) => m.forward(tape, p, state, q),
            Self::Linear(m) => m.forward(tape, p, state, q),
            Self::Vdn { .. } => {
                let rows = tape.shape(q)[0];
                let s = tape.sum_axis(q, 1)?;
                tape.reshape(s, &[rows, 1])
            }
        }
    }
}

/// Unconstrained feed-forward critic over `state ⊕ q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralMixer {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl CentralMixer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        state_dim: usize,
        n_agents: usize,
        hidden: usize,
    ) -> Self {
        Self {
            l1: Linear::new(store, rng, &format!("{name}.l1"), state_dim + n_agents, hidden),
            l2: Linear::new(store, rng, &format!("{name}.l2"), hidden, hidden),
            l3: Linear::new(store, rng, &format!("{name}.l3"), hidden, 1),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.l1.param_ids(), self.l2.param_ids(), self.l3.param_ids()].concat()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], state: Var, q: Var) -> Result<Var> {
        let x = tape.concat(&[state, q], 1)?;
        let h = self.l1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.l2.forward(tape, p, h)?;
        let h = tape.relu(h)?;
        self.l3.forward(tape, p, h)
    }
}
