//! Minimal reverse-mode automatic differentiation for small dense networks.
//!
//! A [`Tape`] records operations on [`Tensor`] values and returns [`Var`]
//! handles. [`Tape::backward`] sweeps the records in reverse and yields
//! [`Gradients`] for every node reachable from a trainable leaf.
//!
//! ```
//! use pac_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f32>::new();
//! let x = tape.param(Tensor::from_slice(&[3], &[1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum_all(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).data(), &[2.0, 4.0, 6.0]);
//! ```

mod broadcast;
mod check;
mod error;
mod gaussian;
mod optim;
mod real;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_coords, relative_error, GradCheckReport};
pub use error::{AutodiffError, Result};
pub use gaussian::{gaussian_reparam_sample, kl_diag_gaussian, kl_diag_gaussian_terms};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use real::Real;
pub use tape::{CustomVjp, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
