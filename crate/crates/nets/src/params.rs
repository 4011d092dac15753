use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use pac_autodiff::{Real, Tape, Tensor, Var};
use rand::Rng;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect()
    }

    /// Like [`bind`](Self::bind) for the listed tensors only; other slots
    /// hold a shared placeholder scalar.
    pub fn bind_only(&self, tape: &mut Tape<T>, ids: &[ParamId], trainable: bool) -> Vec<Var> {
        let placeholder = tape.constant(Tensor::scalar(T::zero()));
        let mut vars = vec![placeholder; self.tensors.len()];
        for id in ids {
            vars[id.0] = tape.leaf(self.tensors[id.0].clone(), trainable);
        }
        vars
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Overwrites every tensor with the corresponding one from `other`.
    pub fn copy_from(&mut self, other: &ParamStore<T>) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        self.tensors.clone_from(&other.tensors);
    }

    /// Hash over names, shapes and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            n.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_f64().map(f64::to_bits).hash(&mut h);
            }
        }
        h.finish()
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
