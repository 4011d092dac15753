use pac_autodiff::{Real, Result, Tape, Tensor, Var};
use rand::Rng;

use crate::params::{uniform, ParamId, ParamStore};

/// `y = x W + b` over rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, &[in_dim, out_dim], bound));
        let b = store.add(format!("{name}.b"), uniform(rng, &[out_dim], bound));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.w.index()])?;
        tape.add(y, p[self.b.index()])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    /// Sets weights to zero and every bias entry to `bias`.
    pub fn set_constant(&self, store: &mut ParamStore, bias: f32) {
        store.get_mut(self.w).data_mut().fill(0.0);
        store.get_mut(self.b).data_mut().fill(bias);
    }
}

/// Gated recurrent unit with reset, update and candidate gates packed along
/// the last axis in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let h3 = 3 * hidden;
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(rng, &[in_dim, h3], bound)),
            w_hh: store.add(format!("{name}.w_hh"), uniform(rng, &[hidden, h3], bound)),
            b_ih: store.add(format!("{name}.b_ih"), uniform(rng, &[h3], bound)),
            b_hh: store.add(format!("{name}.b_hh"), uniform(rng, &[h3], bound)),
            hidden,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gi = tape.matmul(x, p[self.w_ih.index()])?;
        let gi = tape.add(gi, p[self.b_ih.index()])?;
        let gh = tape.matmul(h, p[self.w_hh.index()])?;
        let gh = tape.add(gh, p[self.b_hh.index()])?;

        let (ir, iz, inn) = (
            tape.narrow(gi, 1, 0, hd)?,
            tape.narrow(gi, 1, hd, hd)?,
            tape.narrow(gi, 1, 2 * hd, hd)?,
        );
        let (hr, hz, hn) = (
            tape.narrow(gh, 1, 0, hd)?,
            tape.narrow(gh, 1, hd, hd)?,
            tape.narrow(gh, 1, 2 * hd, hd)?,
        );
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r)?;
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z)?;
        let rn = tape.mul(r, hn)?;
        let n = tape.add(inn, rn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        tape.add(n, zd)
    }
}

/// Shared per-agent trunk: linear + ReLU, GRU, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    pub fc: Linear,
    pub gru: GruCell,
    pub head: Linear,
}

impl AgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input_dim: usize,
        hidden: usize,
        n_out: usize,
    ) -> Self {
        Self {
            fc: Linear::new(store, rng, &format!("{name}.fc"), input_dim, hidden),
            gru: GruCell::new(store, rng, &format!("{name}.gru"), hidden, hidden),
            head: Linear::new(store, rng, &format!("{name}.head"), hidden, n_out),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.fc.param_ids(), self.gru.param_ids(), self.head.param_ids()].concat()
    }

    pub fn input_dim(&self) -> usize {
        self.fc.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    pub fn n_out(&self) -> usize {
        self.head.out_dim
    }

    pub fn initial_hidden<T: Real>(&self, rows: usize) -> Tensor<T> {
        Tensor::zeros(&[rows, self.hidden()])
    }

    /// One recurrent step over `rows` agents: `x [rows, in]`, `h [rows, hidden]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var, h: Var) -> Result<(Var, Var)> {
        let a = self.fc.forward(tape, p, x)?;
        let a = tape.relu(a)?;
        let h2 = self.gru.forward(tape, p, a, h)?;
        let out = self.head.forward(tape, p, h2)?;
        Ok((out, h2))
    }
}

/// Two-layer ReLU perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            l1: Linear::new(store, rng, &format!("{name}.l1"), in_dim, hidden),
            l2: Linear::new(store, rng, &format!("{name}.l2"), hidden, out_dim),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.l1.param_ids(), self.l2.param_ids()].concat()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.l2.forward(tape, p, h)
    }
}
