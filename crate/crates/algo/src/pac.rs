//! Counterfactual labels and the PAC training losses.
//!
//! Losses take tape variables for the differentiable inputs and plain
//! slices for everything treated as a constant (labels, targets, critic
//! values). Row masks exclude padding; every loss is averaged over valid
//! steps (or valid agent-steps where noted).

use pac_autodiff::{kl_diag_gaussian_terms, Real, Result, Tape, Tensor, Var};

use crate::config::CaForm;

/// Counterfactual optimal actions and the swept critic values behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPrediction {
    /// `rows × n_agents`; zero on invalid rows.
    pub labels: Vec<usize>,
    /// `rows × n_agents × K`: critic value with agent `i` switched to each
    /// action; `-inf` for unavailable actions and invalid rows.
    pub swept: Vec<f64>,
    /// Number of critic evaluations performed.
    pub evaluations: usize,
}

/// Rows per critic call when sweeping.
const SWEEP_CHUNK: usize = 4096;

/// For every valid step row and agent `i`, evaluates the critic with the
/// other agents' utilities fixed at their taken actions and agent `i`'s
/// utility set to each of its `K` actions, then labels the best available
/// action (lowest index on ties).
///
/// `eval(states, q, rows)` maps `rows × state_dim` states and `rows × n`
/// per-agent utilities to `rows` critic values.
#[allow(clippy::too_many_arguments)]
pub fn counterfactual_predict<F>(
    mut eval: F,
    states: &[f64],
    state_dim: usize,
    qstar: &[f64],
    taken: &[usize],
    avail: &[bool],
    valid: &[bool],
    n_agents: usize,
    n_actions: usize,
) -> Result<CounterfactualPrediction>
where
    F: FnMut(&[f64], &[f64], usize) -> Result<Vec<f64>>,
{
    let (n, k) = (n_agents, n_actions);
    let rows = valid.len();
    let mut swept = vec![f64::NEG_INFINITY; rows * n * k];
    let mut labels = vec![0usize; rows * n];

    let jobs: Vec<(usize, usize, usize)> = (0..rows)
        .filter(|&r| valid[r])
        .flat_map(|r| (0..n).flat_map(move |i| (0..k).map(move |a| (r, i, a))))
        .collect();
    let mut evaluations = 0;
    for chunk in jobs.chunks(SWEEP_CHUNK) {
        let mut s_in = Vec::with_capacity(chunk.len() * state_dim);
        let mut q_in = Vec::with_capacity(chunk.len() * n);
        for &(r, i, a) in chunk {
            s_in.extend_from_slice(&states[r * state_dim..][..state_dim]);
            for j in 0..n {
                let act = if j == i { a } else { taken[r * n + j] };
                q_in.push(qstar[(r * n + j) * k + act]);
            }
        }
        let out = eval(&s_in, &q_in, chunk.len())?;
        evaluations += chunk.len();
        for (&(r, i, a), v) in chunk.iter().zip(out) {
            if avail[(r * n + i) * k + a] {
                swept[(r * n + i) * k + a] = v;
            }
        }
    }
    for r in (0..rows).filter(|&r| valid[r]) {
        for i in 0..n {
            let row = &swept[(r * n + i) * k..][..k];
            labels[r * n + i] = argmax(row);
        }
    }
    Ok(CounterfactualPrediction {
        labels,
        swept,
        evaluations,
    })
}

/// Index of the largest entry, lowest index on ties; `-inf` entries lose.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Best available action per agent row of a `rows × K` value table.
pub fn masked_argmax(values: &[f64], avail: &[bool], n_actions: usize) -> Vec<usize> {
    values
        .chunks(n_actions)
        .zip(avail.chunks(n_actions))
        .map(|(v, m)| {
            let masked: Vec<f64> = v
                .iter()
                .zip(m)
                .map(|(&x, &ok)| if ok { x } else { f64::NEG_INFINITY })
                .collect();
            argmax(&masked)
        })
        .collect()
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.to_f64_vec()
}

fn mask_tensor<T: Real>(mask: &[bool]) -> Tensor<T> {
    let data = mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect();
    Tensor::new(vec![mask.len()], data).expect("mask shape")
}

fn denom(count: usize) -> f64 {
    1.0 / count.max(1) as f64
}

/// `Σ_rows Σ_u coef[r, u] · log π(u | r)` divided by `count`, with
/// unavailable log-probabilities replaced by zero.
fn weighted_logp_sum<T: Real>(
    tape: &mut Tape<T>,
    logp: Var,
    avail: &[bool],
    coef: Vec<f64>,
    count: usize,
) -> Result<Var> {
    let shape = tape.shape(logp).to_vec();
    let safe = tape.masked_fill(logp, avail, 0.0)?;
    let c = tape.constant(Tensor::from_f64(&shape, &coef)?);
    let prod = tape.mul(safe, c)?;
    let total = tape.sum_all(prod)?;
    tape.scale(total, denom(count))
}

/// Policy probabilities from log-probabilities, zero where unavailable.
pub fn probs_from_logp(logp: &[f64], avail: &[bool]) -> Vec<f64> {
    logp.iter()
        .zip(avail)
        .map(|(&l, &ok)| if ok { l.exp() } else { 0.0 })
        .collect()
}

/// Counterfactual assistance loss. `logp` is `[R, K]` masked log-policy,
/// `pi` and `q` the policy probabilities and message-conditioned utilities
/// held constant, `labels` the counterfactual actions, `taken` the replayed
/// actions. Summed over agents and averaged over `n_steps`.
#[allow(clippy::too_many_arguments)]
pub fn loss_ca<T: Real>(
    tape: &mut Tape<T>,
    form: CaForm,
    logp: Var,
    pi: &[f64],
    q: &[f64],
    labels: &[usize],
    taken: &[usize],
    avail: &[bool],
    valid: &[bool],
    n_steps: usize,
) -> Result<Var> {
    let k = *tape.shape(logp).last().unwrap_or(&1);
    let mut coef = vec![0.0; pi.len()];
    for r in (0..valid.len()).filter(|&r| valid[r]) {
        let (p, qv) = (&pi[r * k..][..k], &q[r * k..][..k]);
        let star = labels[r];
        let baseline: f64 = (0..k)
            .filter(|&u| form == CaForm::Directed || u != star)
            .map(|u| p[u] * qv[u])
            .sum();
        let adv = qv[star] - baseline;
        match form {
            CaForm::Literal => coef[r * k + taken[r]] += adv,
            CaForm::Directed => coef[r * k + star] -= adv,
        }
    }
    weighted_logp_sum(tape, logp, avail, coef, n_steps)
}

/// Cross-entropy replacement for the assistance loss: `−Σᵢ log πᵢ(û*ᵢ)`
/// averaged over `n_steps`.
pub fn loss_ca_cross_entropy<T: Real>(
    tape: &mut Tape<T>,
    logp: Var,
    labels: &[usize],
    avail: &[bool],
    valid: &[bool],
    n_steps: usize,
) -> Result<Var> {
    let k = *tape.shape(logp).last().unwrap_or(&1);
    let mut coef = vec![0.0; valid.len() * k];
    for r in (0..valid.len()).filter(|&r| valid[r]) {
        coef[r * k + labels[r]] = -1.0;
    }
    weighted_logp_sum(tape, logp, avail, coef, n_steps)
}

/// Information-bottleneck loss and its two parts.
#[derive(Debug, Clone, Copy)]
pub struct IbLoss {
    pub loss: Var,
    pub cross_entropy: f64,
    pub kl: f64,
}

/// Decoder cross-entropy towards the labels plus `β` times the KL between
/// `N(μ, I)` and the learned prior, both averaged over valid agent rows.
#[allow(clippy::too_many_arguments)]
pub fn loss_ib<T: Real>(
    tape: &mut Tape<T>,
    decoder_logits: Var,
    labels: &[usize],
    mu: Var,
    prior_mu: Var,
    prior_logvar: Var,
    beta: f64,
    valid: &[bool],
) -> Result<IbLoss> {
    let count = valid.iter().filter(|&&v| v).count();
    let mask = tape.constant(mask_tensor(valid));

    let ls = tape.log_softmax(decoder_logits, 1)?;
    let picked = tape.gather(ls, labels)?;
    let picked = tape.mul(picked, mask)?;
    let ce = tape.sum_all(picked)?;
    let ce = tape.scale(ce, -denom(count))?;

    let mu_shape = tape.shape(mu).to_vec();
    let lv_p = tape.constant(Tensor::zeros(&mu_shape));
    let terms = kl_diag_gaussian_terms(tape, mu, lv_p, prior_mu, prior_logvar)?;
    let per_row = tape.sum_axis(terms, 1)?;
    let per_row = tape.mul(per_row, mask)?;
    let kl = tape.sum_all(per_row)?;
    let kl = tape.scale(kl, denom(count))?;

    let weighted_kl = tape.scale(kl, beta)?;
    let loss = tape.add(ce, weighted_kl)?;
    Ok(IbLoss {
        loss,
        cross_entropy: tape.value(ce).item().to_f64().unwrap_or(f64::NAN),
        kl: tape.value(kl).item().to_f64().unwrap_or(f64::NAN),
    })
}

/// Per-agent soft values `vᵢ = Σ_u πᵢ(u)[qᵢ(u) − α log πᵢ(u)]`, `[R]`, with
/// `q` constant.
pub fn soft_values<T: Real>(tape: &mut Tape<T>, logp: Var, q: &[f64], alpha: f64, avail: &[bool]) -> Result<Var> {
    let shape = tape.shape(logp).to_vec();
    let p = tape.exp(logp)?;
    let p = tape.masked_fill(p, avail, 0.0)?;
    let safe = tape.masked_fill(logp, avail, 0.0)?;
    let qc = tape.constant(Tensor::from_f64(&shape, q)?);
    let ent = tape.scale(safe, alpha)?;
    let inner = tape.sub(qc, ent)?;
    let prod = tape.mul(p, inner)?;
    tape.sum_axis(prod, 1)
}

/// Factorised soft policy loss: `−mean_t mix(s_t, v_t)` through the given
/// (frozen) mixer closure. `logp` and `q` have `n_steps_total · n` rows.
#[allow(clippy::too_many_arguments)]
pub fn loss_lp<T: Real, M>(
    tape: &mut Tape<T>,
    mix: M,
    state: Var,
    logp: Var,
    q: &[f64],
    alpha: f64,
    avail: &[bool],
    step_valid: &[bool],
    n_agents: usize,
) -> Result<Var>
where
    M: FnOnce(&mut Tape<T>, Var, Var) -> Result<Var>,
{
    let rows = step_valid.len();
    let v = soft_values(tape, logp, q, alpha, avail)?;
    let v = tape.reshape(v, &[rows, n_agents])?;
    let mixed = mix(tape, state, v)?;
    let mixed = tape.reshape(mixed, &[rows])?;
    let mask = tape.constant(mask_tensor(step_valid));
    let m = tape.mul(mixed, mask)?;
    let total = tape.sum_all(m)?;
    let count = step_valid.iter().filter(|&&v| v).count();
    tape.scale(total, -denom(count))
}

/// Mean policy entropy over valid agent rows.
pub fn mean_entropy(logp: &[f64], avail: &[bool], valid: &[bool], n_actions: usize) -> f64 {
    let pi = probs_from_logp(logp, avail);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in (0..valid.len()).filter(|&r| valid[r]) {
        let h: f64 = (0..n_actions)
            .map(|u| r * n_actions + u)
            .filter(|&j| avail[j] && pi[j] > 0.0)
            .map(|j| -pi[j] * logp[j])
            .sum();
        total += h;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Temperature loss `α · (H − H₀)` on the log-temperature leaf, with the
/// policy entropy `H` held constant.
pub fn loss_alpha<T: Real>(tape: &mut Tape<T>, log_alpha: Var, entropy: f64, target_entropy: f64) -> Result<Var> {
    let alpha = tape.exp(log_alpha)?;
    let l = tape.scale(alpha, entropy - target_entropy)?;
    tape.sum_all(l)
}

/// TD(λ) returns of one episode computed backwards. `v_next[t]` is the
/// bootstrap value of the state reached after step `t`; the last step
/// bootstraps zero when the episode terminated.
pub fn lambda_returns(rewards: &[f64], v_next: &[f64], terminated: bool, gamma: f64, lambda: f64) -> Vec<f64> {
    let len = rewards.len();
    let mut g = vec![0.0; len];
    for t in (0..len).rev() {
        g[t] = if t + 1 == len {
            let v = if terminated { 0.0 } else { v_next[t] };
            rewards[t] + gamma * v
        } else {
            rewards[t] + gamma * ((1.0 - lambda) * v_next[t] + lambda * g[t + 1])
        };
    }
    g
}

fn squared_residuals<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    y: &[f64],
    weights: Vec<f64>,
    count: usize,
) -> Result<Var> {
    let rows = y.len();
    let pred = tape.reshape(pred, &[rows])?;
    let yc = tape.constant(Tensor::from_f64(&[rows], y)?);
    let d = tape.sub(pred, yc)?;
    let d2 = tape.mul(d, d)?;
    let w = tape.constant(Tensor::from_f64(&[rows], &weights)?);
    let wd = tape.mul(d2, w)?;
    let total = tape.sum_all(wd)?;
    tape.scale(total, denom(count))
}

/// Mean squared error of the critic against the targets over valid steps.
pub fn loss_qstar<T: Real>(tape: &mut Tape<T>, pred: Var, y: &[f64], valid: &[bool]) -> Result<Var> {
    let weights = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let count = valid.iter().filter(|&&v| v).count();
    squared_residuals(tape, pred, y, weights, count)
}

/// Per-step weights: 1 where `pred < y`, `w_const` otherwise, 0 on padding.
pub fn ow_weights(pred: &[f64], y: &[f64], valid: &[bool], w_const: f64) -> Vec<f64> {
    pred.iter()
        .zip(y)
        .zip(valid)
        .map(|((&p, &t), &v)| match (v, p - t < 0.0) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => w_const,
        })
        .collect()
}

/// Weighted squared TD error of the monotonic `Q_tot`.
pub fn loss_qtot<T: Real>(tape: &mut Tape<T>, pred: Var, y: &[f64], valid: &[bool], w_const: f64) -> Result<Var> {
    let pv = to_f64(tape.value(pred));
    let weights = ow_weights(&pv, y, valid, w_const);
    let count = valid.iter().filter(|&&v| v).count();
    squared_residuals(tape, pred, y, weights, count)
}

/// Term-weighted sum of whichever losses are present.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, terms: &[(Option<Var>, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(term, w) in terms {
        let Some(v) = term else { continue };
        let scaled = tape.scale(v, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok(match acc {
        Some(a) => a,
        None => tape.constant(Tensor::scalar(T::zero())),
    })
}
