//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Nodes are stored in creation order, so inputs always
//! precede their consumers and [`Tape::backward`] can sweep the list once in
//! reverse. A tape is built per update and dropped afterwards.

use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::broadcast::{broadcast_shape, BroadcastMap};
use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// Vector-Jacobian product of a user-defined operation: receives the input
/// values, the output value and the output gradient; returns one gradient per
/// input.
pub type CustomVjp<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

/// Operation kinds accepted by [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Relu,
    Abs,
    Tanh,
    Sigmoid,
    Elu,
    Exp,
    Log,
    Sum(usize),
    Mean(usize),
    Concat(usize),
    Gather(Vec<usize>),
    Softmax(usize),
    LogSoftmax(usize),
    Broadcast(Vec<usize>),
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    AddScalar {
        x: usize,
    },
    Relu {
        x: usize,
    },
    Abs {
        x: usize,
    },
    Tanh {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Elu {
        x: usize,
    },
    Exp {
        x: usize,
    },
    Log {
        x: usize,
    },
    Sum {
        x: usize,
        axis: Axis,
    },
    Mean {
        x: usize,
        axis: Axis,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        outer: usize,
        inner: usize,
    },
    Gather {
        x: usize,
        idx: Vec<usize>,
        width: usize,
    },
    Softmax {
        x: usize,
        axis: Axis,
    },
    LogSoftmax {
        x: usize,
        axis: Axis,
        mask: Option<Vec<bool>>,
    },
    Broadcast {
        x: usize,
    },
    Reshape {
        x: usize,
    },
    Narrow {
        x: usize,
        axis: Axis,
        start: usize,
    },
    MaskedFill {
        x: usize,
        keep: Vec<bool>,
    },
    Custom {
        inputs: Vec<usize>,
        vjp: CustomVjp<T>,
    },
}

/// `(outer, len, inner)` decomposition of a shape around one axis.
#[derive(Debug, Clone, Copy)]
struct Axis {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Axis {
    fn of(shape: &[usize], axis: usize, op: &'static str) -> Result<Self> {
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Real = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.index()].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Constant copy of `x`; gradients stop here.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let v = self.nodes[i].value.clone();
        Ok(self.constant(v))
    }

    /// Dispatch by [`OpKind`].
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let want = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            OpKind::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != want {
            return Err(AutodiffError::InvalidShape {
                op: "apply",
                shape: vec![inputs.len()],
                reason: format!("{kind:?} takes {want} inputs"),
            });
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::ScalarMul(c) => self.scale(inputs[0], c),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Abs => self.abs(inputs[0]),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::Sigmoid => self.sigmoid(inputs[0]),
            OpKind::Elu => self.elu(inputs[0]),
            OpKind::Exp => self.exp(inputs[0]),
            OpKind::Log => self.log(inputs[0]),
            OpKind::Sum(axis) => self.sum_axis(inputs[0], axis),
            OpKind::Mean(axis) => self.mean_axis(inputs[0], axis),
            OpKind::Concat(axis) => self.concat(inputs, axis),
            OpKind::Gather(idx) => self.gather(inputs[0], &idx),
            OpKind::Softmax(axis) => self.softmax(inputs[0], axis),
            OpKind::LogSoftmax(axis) => self.log_softmax(inputs[0], axis),
            OpKind::Broadcast(shape) => self.broadcast_to(inputs[0], &shape),
        }
    }

    // ----- linear algebra -----

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.nodes[ia].value.data(),
            false,
            self.nodes[ib].value.data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a: ia, b: ib, m, k, n }, rg))
    }

    // ----- broadcasting binary ops -----

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out_shape = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: name,
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        })?;
        let total: usize = out_shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let mut out = Vec::with_capacity(total);
        if va.shape() == vb.shape() {
            out.extend(da.iter().zip(db).map(|(&x, &y)| f(x, y)));
        } else {
            let ma = BroadcastMap::new(va.shape(), &out_shape);
            let mb = BroadcastMap::new(vb.shape(), &out_shape);
            match (&ma, &mb) {
                (BroadcastMap::Same, _) => mb.for_each(&out_shape, |o, j| out.push(f(da[o], db[j]))),
                (_, BroadcastMap::Same) => ma.for_each(&out_shape, |o, i| out.push(f(da[i], db[o]))),
                _ => out.extend((0..total).map(|o| f(da[ma.index(o)], db[mb.index(o)]))),
            }
        }
        Ok((Tensor::new(out_shape, out)?, ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ia, ib) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(v, Op::Add { a: ia, b: ib }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ia, ib) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(v, Op::Sub { a: ia, b: ib }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ia, ib) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(v, Op::Mul { a: ia, b: ib }, rg))
    }

    // ----- elementwise unary ops -----

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> Result<(Tensor<T>, usize)> {
        let i = self.check(x)?;
        Ok((self.nodes[i].value.map(f), i))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        let (v, i) = self.unary(x, |a| a * c)?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Scale { x: i, c }, rg))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        let (v, i) = self.unary(x, |a| a + c)?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::AddScalar { x: i }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let (v, i) = self.unary(x, |a| if a > T::zero() { a } else { T::zero() })?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Relu { x: i }, rg))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let (v, i) = self.unary(x, |a| a.abs())?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Abs { x: i }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let (v, i) = self.unary(x, |a| a.tanh())?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Tanh { x: i }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let (v, i) = self.unary(x, |a| {
            if a >= T::zero() {
                T::one() / (T::one() + (-a).exp())
            } else {
                let e = a.exp();
                e / (T::one() + e)
            }
        })?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Sigmoid { x: i }, rg))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let (v, i) = self.unary(x, |a| if a > T::zero() { a } else { a.exp_m1() })?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Elu { x: i }, rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let (v, i) = self.unary(x, |a| a.exp())?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Exp { x: i }, rg))
    }

    /// Natural log; any non-positive or NaN element is an error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        if let Some((index, &value)) = self.nodes[i]
            .value
            .data()
            .iter()
            .enumerate()
            .find(|(_, &a)| a.is_nan() || a <= T::zero())
        {
            return Err(AutodiffError::Domain {
                op: "log",
                index,
                value: value.to_f64().unwrap_or(f64::NAN),
            });
        }
        let (v, i) = self.unary(x, |a| a.ln())?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Log { x: i }, rg))
    }

    // ----- reductions -----

    fn reduce(&mut self, x: Var, axis: usize, op: &'static str) -> Result<(Tensor<T>, usize, Axis)> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        let ax = Axis::of(value.shape(), axis, op)?;
        let d = value.data();
        let mut out = vec![T::zero(); ax.outer * ax.inner];
        for o in 0..ax.outer {
            for l in 0..ax.len {
                let src = &d[(o * ax.len + l) * ax.inner..][..ax.inner];
                let dst = &mut out[o * ax.inner..][..ax.inner];
                for (dv, &sv) in dst.iter_mut().zip(src) {
                    *dv += sv;
                }
            }
        }
        let shape = reduced_shape(value.shape(), axis);
        Ok((Tensor::new(shape, out)?, i, ax))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (v, i, ax) = self.reduce(x, axis, "sum")?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Sum { x: i, axis: ax }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (mut v, i, ax) = self.reduce(x, axis, "mean")?;
        let inv = T::one() / T::from_usize(ax.len.max(1)).unwrap();
        v.data_mut().iter_mut().for_each(|a| *a *= inv);
        let rg = self.rg(i);
        Ok(self.push(v, Op::Mean { x: i, axis: ax }, rg))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.sum_axis(flat, 0)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.mean_axis(flat, 0)
    }

    // ----- structural ops -----

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(AutodiffError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no inputs".into(),
            });
        }
        let idx: Vec<usize> = xs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        let ax = Axis::of(&first, axis, "concat")?;
        let mut parts = Vec::with_capacity(idx.len());
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let same =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            parts.push((i, s[axis]));
            total += s[axis];
        }
        let mut out = Vec::with_capacity(ax.outer * total * ax.inner);
        for o in 0..ax.outer {
            for &(i, w) in &parts {
                let d = self.nodes[i].value.data();
                out.extend_from_slice(&d[o * w * ax.inner..][..w * ax.inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts,
                outer: ax.outer,
                inner: ax.inner,
            },
            rg,
        ))
    }

    /// Select one entry per row along the last axis: `x[..., K]` with
    /// `idx.len() == rows` gives `x[...]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        let shape = value.shape();
        let width = *shape.last().unwrap_or(&1);
        let rows = value.len() / width.max(1);
        if idx.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                lhs: shape.to_vec(),
                rhs: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&k| k >= width) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather",
                index: bad,
                extent: width,
            });
        }
        let d = value.data();
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &k)| d[r * width + k]).collect();
        let out_shape = reduced_shape(shape, shape.len() - 1);
        let rg = self.rg(i);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Gather {
                x: i,
                idx: idx.to_vec(),
                width,
            },
            rg,
        ))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        let ok = broadcast_shape(value.shape(), shape).is_some_and(|s| s == shape);
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast",
                lhs: value.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let d = value.data();
        let mut out = Vec::with_capacity(shape.iter().product());
        BroadcastMap::new(value.shape(), shape).for_each(shape, |_, j| out.push(d[j]));
        let rg = self.rg(i);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Broadcast { x: i }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.check(x)?;
        let v = self.nodes[i].value.clone().reshape(shape)?;
        let rg = self.rg(i);
        Ok(self.push(v, Op::Reshape { x: i }, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        let ax = Axis::of(value.shape(), axis, "narrow")?;
        if start + len > ax.len || len == 0 {
            return Err(AutodiffError::IndexOutOfRange {
                op: "narrow",
                index: start + len,
                extent: ax.len,
            });
        }
        let d = value.data();
        let mut out = Vec::with_capacity(ax.outer * len * ax.inner);
        for o in 0..ax.outer {
            out.extend_from_slice(&d[(o * ax.len + start) * ax.inner..][..len * ax.inner]);
        }
        let mut shape = value.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(i);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Narrow {
                x: i,
                axis: Axis {
                    outer: ax.outer,
                    len: ax.len,
                    inner: ax.inner,
                },
                start,
            },
            rg,
        ))
    }

    /// Entries where `keep` is false are replaced by `fill` and receive no
    /// gradient.
    pub fn masked_fill(&mut self, x: Var, keep: &[bool], fill: f64) -> Result<Var> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        if keep.len() != value.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_fill",
                lhs: value.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let fill = T::from_f64_lossy(fill);
        let out: Vec<T> = value
            .data()
            .iter()
            .zip(keep)
            .map(|(&a, &k)| if k { a } else { fill })
            .collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(i);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MaskedFill {
                x: i,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    // ----- normalisations -----

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        let ax = Axis::of(value.shape(), axis, "softmax")?;
        let mut out = value.data().to_vec();
        for_each_lane(ax, |lane| {
            let mx = lane.iter().map(|&j| out[j]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for &j in lane {
                out[j] = (out[j] - mx).exp();
                z += out[j];
            }
            for &j in lane {
                out[j] = out[j] / z;
            }
        });
        let shape = value.shape().to_vec();
        let rg = self.rg(i);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x: i, axis: ax }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.log_softmax_impl(x, axis, None)
    }

    /// Log-softmax over the last axis restricted to entries where `avail`
    /// is true. Masked entries hold `-inf` and get zero gradient. Every lane
    /// needs at least one available entry.
    pub fn masked_log_softmax(&mut self, x: Var, avail: &[bool]) -> Result<Var> {
        let rank = self.shape(x).len();
        if avail.len() != self.value(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_log_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![avail.len()],
            });
        }
        self.log_softmax_impl(x, rank - 1, Some(avail.to_vec()))
    }

    fn log_softmax_impl(&mut self, x: Var, axis: usize, mask: Option<Vec<bool>>) -> Result<Var> {
        let i = self.check(x)?;
        let value = &self.nodes[i].value;
        let ax = Axis::of(value.shape(), axis, "log_softmax")?;
        let mut out = value.data().to_vec();
        let mut empty_lane = None;
        for_each_lane(ax, |lane| {
            let on = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
            let mx = lane
                .iter()
                .filter(|&&j| on(j))
                .map(|&j| out[j])
                .fold(T::neg_infinity(), T::max);
            if mx == T::neg_infinity() {
                empty_lane.get_or_insert(lane[0]);
                return;
            }
            let z: T = lane.iter().filter(|&&j| on(j)).map(|&j| (out[j] - mx).exp()).sum();
            let lse = mx + z.ln();
            for &j in lane {
                out[j] = if on(j) { out[j] - lse } else { T::neg_infinity() };
            }
        });
        if let Some(index) = empty_lane {
            return Err(AutodiffError::Domain {
                op: "log_softmax",
                index,
                value: f64::NEG_INFINITY,
            });
        }
        let shape = value.shape().to_vec();
        let rg = self.rg(i);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax { x: i, axis: ax, mask }, rg))
    }

    /// User-defined operation with a hand-written vector-Jacobian product.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, vjp: CustomVjp<T>) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(value, Op::Custom { inputs: idx, vjp }, rg))
    }

    // ----- reverse sweep -----

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.check(loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.nodes[root].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        let val = |j: usize| self.nodes[j].value.data();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[j].requires_grad {
                return;
            }
            let slot = grads[j].get_or_insert_with(|| vec![T::zero(); self.nodes[j].value.len()]);
            f(slot);
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                // dA = G·Bᵀ, dB = Aᵀ·G
                acc(a, &mut |s| T::gemm(m, n, k, g, false, val(b), true, s, true));
                acc(b, &mut |s| T::gemm(k, m, n, val(a), true, g, false, s, true));
            }
            &Op::Add { a, b } => {
                self.reduce_broadcast(a, out.shape(), g, &mut acc, |gv, _| gv);
                self.reduce_broadcast(b, out.shape(), g, &mut acc, |gv, _| gv);
            }
            &Op::Sub { a, b } => {
                self.reduce_broadcast(a, out.shape(), g, &mut acc, |gv, _| gv);
                self.reduce_broadcast(b, out.shape(), g, &mut acc, |gv, _| -gv);
            }
            &Op::Mul { a, b } => {
                // each side needs the other operand at the broadcast position
                let other_b = self.expand(b, out.shape());
                let other_a = self.expand(a, out.shape());
                self.reduce_broadcast(a, out.shape(), g, &mut acc, |gv, o| gv * other_b[o]);
                self.reduce_broadcast(b, out.shape(), g, &mut acc, |gv, o| gv * other_a[o]);
            }
            &Op::Scale { x, c } => acc(x, &mut |s| s.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * c)),
            &Op::AddScalar { x } | &Op::Reshape { x } => {
                acc(x, &mut |s| s.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv))
            }
            &Op::Relu { x } => {
                let xv = val(x);
                acc(x, &mut |s| {
                    for ((d, &gv), &a) in s.iter_mut().zip(g).zip(xv) {
                        if a > T::zero() {
                            *d += gv;
                        }
                    }
                })
            }
            &Op::Abs { x } => {
                let xv = val(x);
                acc(x, &mut |s| {
                    for ((d, &gv), &a) in s.iter_mut().zip(g).zip(xv) {
                        if a > T::zero() {
                            *d += gv;
                        } else if a < T::zero() {
                            *d -= gv;
                        }
                    }
                })
            }
            &Op::Tanh { x } => acc(x, &mut |s| {
                for ((d, &gv), &y) in s.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (T::one() - y * y);
                }
            }),
            &Op::Sigmoid { x } => acc(x, &mut |s| {
                for ((d, &gv), &y) in s.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (T::one() - y);
                }
            }),
            &Op::Elu { x } => {
                let xv = val(x);
                acc(x, &mut |s| {
                    for (((d, &gv), &y), &a) in s.iter_mut().zip(g).zip(out.data()).zip(xv) {
                        *d += if a > T::zero() { gv } else { gv * (y + T::one()) };
                    }
                })
            }
            &Op::Exp { x } => acc(x, &mut |s| {
                for ((d, &gv), &y) in s.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y;
                }
            }),
            &Op::Log { x } => {
                let xv = val(x);
                acc(x, &mut |s| {
                    for ((d, &gv), &a) in s.iter_mut().zip(g).zip(xv) {
                        *d += gv / a;
                    }
                })
            }
            &Op::Sum { x, axis } | &Op::Mean { x, axis } => {
                let scale = if matches!(self.nodes[i].op, Op::Mean { .. }) {
                    T::one() / T::from_usize(axis.len.max(1)).unwrap()
                } else {
                    T::one()
                };
                acc(x, &mut |s| {
                    for o in 0..axis.outer {
                        let gsrc = &g[o * axis.inner..][..axis.inner];
                        for l in 0..axis.len {
                            let dst = &mut s[(o * axis.len + l) * axis.inner..][..axis.inner];
                            for (d, &gv) in dst.iter_mut().zip(gsrc) {
                                *d += gv * scale;
                            }
                        }
                    }
                })
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(j, w) in parts {
                    acc(j, &mut |s| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..][..w * inner];
                            let dst = &mut s[o * w * inner..][..w * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &gv)| *d += gv);
                        }
                    });
                    offset += w;
                }
            }
            Op::Gather { x, idx, width } => acc(*x, &mut |s| {
                for (r, (&k, &gv)) in idx.iter().zip(g).enumerate() {
                    s[r * width + k] += gv;
                }
            }),
            &Op::Softmax { x, axis } => {
                let y = out.data();
                acc(x, &mut |s| {
                    for_each_lane(axis, |lane| {
                        let dot: T = lane.iter().map(|&j| g[j] * y[j]).sum();
                        for &j in lane {
                            s[j] += y[j] * (g[j] - dot);
                        }
                    })
                })
            }
            Op::LogSoftmax { x, axis, mask } => {
                let y = out.data();
                acc(*x, &mut |s| {
                    for_each_lane(*axis, |lane| {
                        let on = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
                        let gsum: T = lane.iter().filter(|&&j| on(j)).map(|&j| g[j]).sum();
                        for &j in lane {
                            if on(j) {
                                s[j] += g[j] - y[j].exp() * gsum;
                            }
                        }
                    })
                })
            }
            &Op::Broadcast { x } => {
                self.reduce_broadcast(x, out.shape(), g, &mut acc, |gv, _| gv);
            }
            &Op::Narrow { x, axis, start } => {
                let width = out.shape().iter().product::<usize>() / (axis.outer * axis.inner).max(1);
                acc(x, &mut |s| {
                    for o in 0..axis.outer {
                        let src = &g[o * width * axis.inner..][..width * axis.inner];
                        let dst = &mut s[(o * axis.len + start) * axis.inner..][..width * axis.inner];
                        dst.iter_mut().zip(src).for_each(|(d, &gv)| *d += gv);
                    }
                })
            }
            Op::MaskedFill { x, keep } => acc(*x, &mut |s| {
                for ((d, &gv), &k) in s.iter_mut().zip(g).zip(keep) {
                    if k {
                        *d += gv;
                    }
                }
            }),
            Op::Custom { inputs, vjp } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&j| &self.nodes[j].value).collect();
                let gt = Tensor::new(out.shape().to_vec(), g.to_vec())?;
                let res = vjp(&ins, out, &gt);
                for (&j, gj) in inputs.iter().zip(res) {
                    if gj.len() != self.nodes[j].value.len() {
                        return Err(AutodiffError::ShapeMismatch {
                            op: "custom",
                            lhs: self.nodes[j].value.shape().to_vec(),
                            rhs: gj.shape().to_vec(),
                        });
                    }
                    acc(j, &mut |s| s.iter_mut().zip(gj.data()).for_each(|(d, &gv)| *d += gv));
                }
            }
        }
        Ok(())
    }

    /// Values of node `j` broadcast to `shape`, flat.
    fn expand(&self, j: usize, shape: &[usize]) -> Vec<T> {
        let v = &self.nodes[j].value;
        if v.shape() == shape {
            return v.data().to_vec();
        }
        let d = v.data();
        let mut out = Vec::with_capacity(shape.iter().product());
        BroadcastMap::new(v.shape(), shape).for_each(shape, |_, k| out.push(d[k]));
        out
    }

    fn reduce_broadcast(
        &self,
        j: usize,
        out_shape: &[usize],
        g: &[T],
        acc: &mut impl FnMut(usize, &mut dyn FnMut(&mut [T])),
        f: impl Fn(T, usize) -> T,
    ) {
        let in_shape = self.nodes[j].value.shape();
        if in_shape == out_shape {
            acc(j, &mut |s| {
                for (o, (d, &gv)) in s.iter_mut().zip(g).enumerate() {
                    *d += f(gv, o);
                }
            });
        } else {
            let map = BroadcastMap::new(in_shape, out_shape);
            acc(j, &mut |s| map.for_each(out_shape, |o, k| s[k] += f(g[o], o)));
        }
    }
}

/// Calls `f` with the flat indices of every lane along the reduced axis.
fn for_each_lane(ax: Axis, mut f: impl FnMut(&[usize])) {
    let mut lane = vec![0usize; ax.len];
    for o in 0..ax.outer {
        for r in 0..ax.inner {
            for (l, slot) in lane.iter_mut().enumerate() {
                *slot = (o * ax.len + l) * ax.inner + r;
            }
            f(&lane);
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f32> {
    tape: u32,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when `v` has no path to the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        let shape = self.shapes[v.index()].clone();
        match &self.grads[v.index()] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// `true` when the reverse sweep reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        v.tape == self.tape && self.grads[v.index()].is_some()
    }
}
