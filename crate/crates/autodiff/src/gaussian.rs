//! Reparameterized Gaussian sampling and the diagonal-Gaussian KL divergence.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `mu + ε` with `ε ~ N(0, I)` recorded as a constant, so gradients reach
/// `mu` only.
pub fn gaussian_reparam_sample<T: Real, R: Rng + ?Sized>(tape: &mut Tape<T>, mu: Var, rng: &mut R) -> Result<Var> {
    let shape = tape.shape(mu).to_vec();
    let n: usize = shape.iter().product();
    let noise: Vec<T> = (0..n)
        .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let eps = tape.constant(Tensor::new(shape, noise)?);
    tape.add(mu, eps)
}

/// `KL(N(mu_p, exp(logvar_p)) ‖ N(mu_q, exp(logvar_q)))` summed over every
/// element. Operands broadcast against each other, so a `[d]` prior can be
/// compared with a `[rows, d]` batch.
pub fn kl_diag_gaussian<T: Real>(
    tape: &mut Tape<T>,
    mu_p: Var,
    logvar_p: Var,
    mu_q: Var,
    logvar_q: Var,
) -> Result<Var> {
    let terms = kl_diag_gaussian_terms(tape, mu_p, logvar_p, mu_q, logvar_q)?;
    tape.sum_all(terms)
}

/// Per-coordinate KL contributions before summation, in the broadcast shape
/// of the operands.
pub fn kl_diag_gaussian_terms<T: Real>(
    tape: &mut Tape<T>,
    mu_p: Var,
    logvar_p: Var,
    mu_q: Var,
    logvar_q: Var,
) -> Result<Var> {
    let (sp, sq) = (tape.shape(mu_p).to_vec(), tape.shape(mu_q).to_vec());
    if tape.shape(logvar_p) != sp.as_slice() || tape.shape(logvar_q) != sq.as_slice() {
        return Err(AutodiffError::ShapeMismatch {
            op: "kl_diag_gaussian",
            lhs: tape.shape(logvar_p).to_vec(),
            rhs: tape.shape(logvar_q).to_vec(),
        });
    }
    // ½ [exp(lv_p − lv_q) + (μ_q − μ_p)² · exp(−lv_q) − 1 + lv_q − lv_p]
    let lv_diff = tape.sub(logvar_p, logvar_q)?;
    let var_ratio = tape.exp(lv_diff)?;
    let dmu = tape.sub(mu_q, mu_p)?;
    let dmu2 = tape.mul(dmu, dmu)?;
    let neg_lvq = tape.neg(logvar_q)?;
    let inv_var_q = tape.exp(neg_lvq)?;
    let maha = tape.mul(dmu2, inv_var_q)?;
    let a = tape.add(var_ratio, maha)?;
    let b = tape.sub(a, lv_diff)?;
    let c = tape.add_scalar(b, -1.0)?;
    tape.scale(c, 0.5)
}
