//! Gradient-verification suite over every network and every loss term.
//!
//! All checks run in `f64` with central differences. The negative control
//! wraps a network output in an activation whose hand-written backward rule
//! is wrong, so a working checker must report it.

use pac_autodiff::{grad_check_coords, kl_diag_gaussian, AutodiffError, CustomVjp, Real, Tape, Tensor, Var};
use pac_envs::{EnvSpec, EpisodeStats};
use pac_nets::{
    aggregate_messages, AgentNet, CentralMixer, LinearMixer, MessageNets, MonotonicMixer, ParamId, ParamStore,
    QmixMixer,
};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::batch::{Episode, EpisodeBatch};
use crate::config::{Algo, CaForm, LearnerConfig, LossWeights, MixerKind, NetDims};
use crate::error::AlgoError;
use crate::model::Model;

/// Passing threshold on the maximum relative error.
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Finite-difference step.
pub const GRAD_EPS: f64 = 1e-4;
/// Coordinates visited per parameter tensor.
const MAX_COORDS: usize = 48;

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub max_relative_error: f64,
    pub coordinates: usize,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRAD_TOLERANCE
    }
}

type SmallRng = rand::rngs::StdRng;

fn rand_tensor(rng: &mut SmallRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `Σ y ⊙ w` with fixed pseudo-random weights, so every output coordinate
/// contributes distinctly.
fn weighted<T: Real>(tape: &mut Tape<T>, y: Var) -> pac_autodiff::Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0).collect();
    let wv = tape.constant(Tensor::from_f64(&shape, &w)?);
    let p = tape.mul(y, wv)?;
    tape.sum_all(p)
}

fn to_ad(e: AlgoError) -> AutodiffError {
    match e {
        AlgoError::Autodiff(a) => a,
        other => AutodiffError::InvalidShape {
            op: "selfcheck",
            shape: vec![],
            reason: other.to_string(),
        },
    }
}

fn run<F>(name: &str, f: F, params: &[Tensor<f64>]) -> pac_autodiff::Result<CheckLine>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> pac_autodiff::Result<Var>,
{
    let r = grad_check_coords(f, params, GRAD_EPS, MAX_COORDS)?;
    Ok(CheckLine {
        name: name.to_string(),
        max_relative_error: r.max_relative_error,
        coordinates: r.coordinates,
    })
}

/// `tanh` whose backward rule drops the square: `g · (1 − y)`.
fn broken_tanh(tape: &mut Tape<f64>, x: Var) -> pac_autodiff::Result<Var> {
    let value = tape.value(x).map(f64::tanh);
    let vjp: CustomVjp<f64> = Box::new(|_inputs, out, g| {
        let d: Vec<f64> = out.data().iter().zip(g.data()).map(|(y, g)| g * (1.0 - y)).collect();
        vec![Tensor::new(out.shape().to_vec(), d).expect("shape")]
    });
    tape.custom(&[x], value, vjp)
}

fn architecture_checks(negative_control: bool) -> pac_autodiff::Result<Vec<CheckLine>> {
    let mut rng = SmallRng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let (n, k, obs_in, hidden, msg_dim, state_dim) = (3, 4, 5, 6, 3, 4);
    let util = AgentNet::new(&mut store, &mut rng, "util", obs_in + msg_dim, hidden, k);
    let policy = AgentNet::new(&mut store, &mut rng, "policy", obs_in, hidden, k);
    let msgs = MessageNets::new(&mut store, &mut rng, "msg", obs_in, obs_in, hidden, msg_dim, k);
    let qmix = MonotonicMixer::Qmix(QmixMixer::new(&mut store, &mut rng, "qmix", state_dim, n, 4, 5));
    let linear = MonotonicMixer::Linear(LinearMixer::new(&mut store, &mut rng, "linear", state_dim, n));
    let central = CentralMixer::new(&mut store, &mut rng, "central", state_dim, n, 6);
    let params = store.cast::<f64>();
    let ts = params.tensors();

    let x = rand_tensor(&mut rng, &[2 * n, obs_in]);
    let m = rand_tensor(&mut rng, &[2 * n, msg_dim]);
    let h = rand_tensor(&mut rng, &[2 * n, hidden]);
    let s = rand_tensor(&mut rng, &[2, state_dim]);
    let q = rand_tensor(&mut rng, &[2, n]);
    let avail: Vec<bool> = (0..2 * n * k).map(|i| i % 3 != 1).collect();

    let mut lines = vec![
        run(
            "utility",
            |t, p| {
                let xv = t.constant(x.clone());
                let mv = t.constant(m.clone());
                let input = t.concat(&[xv, mv], 1)?;
                let hv = t.constant(h.clone());
                let (o1, h1) = util.forward(t, p, input, hv)?;
                let (o2, _) = util.forward(t, p, input, h1)?;
                let y = t.add(o1, o2)?;
                weighted(t, y)
            },
            ts,
        )?,
        run(
            "policy",
            |t, p| {
                let xv = t.constant(x.clone());
                let hv = t.constant(h.clone());
                let (logits, _) = policy.forward(t, p, xv, hv)?;
                let lp = t.masked_log_softmax(logits, &avail)?;
                let safe = t.masked_fill(lp, &avail, 0.0)?;
                weighted(t, safe)
            },
            ts,
        )?,
        run(
            "encoder",
            |t, p| {
                let xv = t.constant(x.clone());
                let mu = msgs.encode(t, p, xv)?;
                weighted(t, mu)
            },
            ts,
        )?,
        run(
            "decoder",
            |t, p| {
                let xv = t.constant(x.clone());
                let mu = msgs.encode(t, p, xv)?;
                let agg = aggregate_messages(t, mu, n)?;
                let logits = msgs.decode(t, p, xv, agg)?;
                weighted(t, logits)
            },
            ts,
        )?,
        run(
            "prior_kl",
            |t, p| {
                let xv = t.constant(x.clone());
                let mu = msgs.encode(t, p, xv)?;
                let lv = t.constant(Tensor::zeros(&[2 * n, msg_dim]));
                kl_diag_gaussian(t, mu, lv, p[msgs.prior_mu.index()], p[msgs.prior_logvar.index()])
            },
            ts,
        )?,
    ];
    for (name, mixer) in [("qmix_mixer", &qmix), ("linear_mixer", &linear)] {
        lines.push(run(
            name,
            |t, p| {
                let sv = t.constant(s.clone());
                let qv = t.constant(q.clone());
                let y = mixer.forward(t, p, sv, qv)?;
                weighted(t, y)
            },
            ts,
        )?);
    }
    lines.push(run(
        "central_mixer",
        |t, p| {
            let sv = t.constant(s.clone());
            let qv = t.constant(q.clone());
            let y = central.forward(t, p, sv, qv)?;
            weighted(t, y)
        },
        ts,
    )?);
    if negative_control {
        lines.push(run(
            "negative_control",
            |t, p| {
                let xv = t.constant(x.clone());
                let mu = msgs.encode(t, p, xv)?;
                let y = broken_tanh(t, mu)?;
                weighted(t, y)
            },
            ts,
        )?);
    }
    Ok(lines)
}

/// A small synthetic environment shape and a padded batch of random
/// episodes on it: one terminated, one truncated.
pub fn synthetic_batch(seed: u64) -> (EnvSpec, EpisodeBatch) {
    let spec = EnvSpec {
        n_agents: 3,
        n_actions: 4,
        obs_dim: 5,
        state_dim: 6,
        episode_limit: 3,
        has_win_condition: false,
    };
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut episodes = Vec::new();
    for (len, terminated) in [(3usize, false), (2, true)] {
        let (n, k) = (spec.n_agents, spec.n_actions);
        let mut ep = Episode {
            n_agents: n,
            n_actions: k,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            len,
            states: (0..(len + 1) * spec.state_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            obs: (0..(len + 1) * n * spec.obs_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            avail: Vec::new(),
            actions: Vec::new(),
            rewards: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            terminated,
            stats: EpisodeStats::default(),
        };
        for slot in 0..=len {
            for _ in 0..n {
                let keep = rng.random_range(0..k);
                let row: Vec<bool> = (0..k).map(|a| a == keep || rng.random_bool(0.6)).collect();
                if slot < len {
                    let choices: Vec<usize> = (0..k).filter(|&a| row[a]).collect();
                    ep.actions.push(choices[rng.random_range(0..choices.len())]);
                }
                ep.avail.extend(row);
            }
        }
        episodes.push(ep);
    }
    let refs: Vec<&Episode> = episodes.iter().collect();
    (spec, EpisodeBatch::from_episodes(&refs).expect("valid synthetic batch"))
}

fn tiny_config(algo: Algo) -> LearnerConfig {
    LearnerConfig {
        dims: NetDims {
            hidden: 6,
            msg_dim: 3,
            msg_hidden: 6,
            mixer_embed: 4,
            hypernet_hidden: 5,
            central_hidden: 6,
        },
        ..LearnerConfig::for_algo(algo)
    }
}

fn only(term: &str) -> LossWeights {
    let pick = |name: &str| if term.split('+').any(|t| t == name) { 1.0 } else { 0.0 };
    LossWeights {
        lp: pick("lp"),
        ca: pick("ca"),
        ib: pick("ib"),
        qstar: pick("qstar"),
        qtot: pick("qtot"),
    }
}

/// Checks the gradient with respect to the tensors in `ids` only; every
/// other parameter enters as a constant.
fn run_subset<F>(name: &str, f: F, store: &ParamStore<f64>, ids: &[ParamId]) -> pac_autodiff::Result<CheckLine>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> pac_autodiff::Result<Var>,
{
    let sub: Vec<Tensor<f64>> = ids.iter().map(|&id| store.get(id).clone()).collect();
    run(
        name,
        |t, vs| {
            let mut full: Vec<Var> = store.tensors().iter().map(|x| t.constant(x.clone())).collect();
            for (id, &v) in ids.iter().zip(vs) {
                full[id.index()] = v;
            }
            f(t, &full)
        },
        &sub,
    )
}

/// Standalone assistance-loss checks with the policy probabilities and
/// utilities frozen at their base values.
fn assistance_checks() -> pac_autodiff::Result<Vec<CheckLine>> {
    let mut rng = SmallRng::seed_from_u64(21);
    let (rows, k) = (6, 4);
    let logits = rand_tensor(&mut rng, &[rows, k]);
    let avail: Vec<bool> = (0..rows * k).map(|i| i % k == 0 || rng.random_bool(0.7)).collect();
    let q: Vec<f64> = (0..rows * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let valid: Vec<bool> = (0..rows).map(|r| r != 4).collect();
    let pick = |rng: &mut SmallRng, r: usize| loop {
        let a = rng.random_range(0..k);
        if avail[r * k + a] {
            break a;
        }
    };
    let labels: Vec<usize> = (0..rows).map(|r| pick(&mut rng, r)).collect();
    let taken: Vec<usize> = (0..rows).map(|r| pick(&mut rng, r)).collect();
    let pi = {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(logits.clone());
        let lp = tape.masked_log_softmax(l, &avail)?;
        crate::pac::probs_from_logp(&tape.value(lp).to_f64_vec(), &avail)
    };
    let mut lines = Vec::new();
    for (name, form) in [
        ("loss_ca_directed", CaForm::Directed),
        ("loss_ca_literal", CaForm::Literal),
    ] {
        lines.push(run(
            name,
            |t, p| {
                let lp = t.masked_log_softmax(p[0], &avail)?;
                crate::pac::loss_ca(t, form, lp, &pi, &q, &labels, &taken, &avail, &valid, 3)
            },
            std::slice::from_ref(&logits),
        )?);
    }
    lines.push(run(
        "loss_ca_cross_entropy",
        |t, p| {
            let lp = t.masked_log_softmax(p[0], &avail)?;
            crate::pac::loss_ca_cross_entropy(t, lp, &labels, &avail, &valid, 3)
        },
        std::slice::from_ref(&logits),
    )?);
    Ok(lines)
}

/// Loss terms through the full learner forward pass. Each term is checked
/// against the parameters it trains; stop-gradient inputs (frozen mixer,
/// critic values, labels, targets) stay fixed because the checked
/// parameters do not feed them.
fn loss_checks() -> pac_autodiff::Result<Vec<CheckLine>> {
    let (spec, batch) = synthetic_batch(5);
    let mut lines = assistance_checks()?;
    let cases: [(&str, Algo, Option<MixerKind>, &str); 8] = [
        ("loss_lp", Algo::Pac, None, "lp"),
        ("loss_lp_linear_mixer", Algo::Pac, Some(MixerKind::Linear), "lp"),
        ("loss_ib", Algo::Pac, None, "ib"),
        ("loss_qstar", Algo::Pac, None, "qstar"),
        ("loss_qtot", Algo::Pac, None, "qtot"),
        ("value_losses", Algo::Pac, None, "qstar+qtot"),
        ("qmix_td_loss", Algo::Qmix, None, "qtot"),
        ("ow_qmix_losses", Algo::OwQmix, None, "qstar+qtot"),
    ];
    for (name, algo, mixer, term) in cases {
        let mut cfg = tiny_config(algo);
        cfg.mixer = mixer;
        cfg.loss_weights = only(term);
        let mut rng = SmallRng::seed_from_u64(3);
        let (model, store) = Model::new(cfg, &spec, &mut rng).map_err(to_ad)?;
        let params = store.cast::<f64>();
        let y = model.targets(&params, &batch).map_err(to_ad)?;
        let nets = &model.nets;
        let msg_ids = nets.messages.as_ref().map(MessageNets::param_ids).unwrap_or_default();
        let mut ids = Vec::new();
        for t in term.split('+') {
            match t {
                "lp" => ids.extend(model.policy_param_ids()),
                "ib" => ids.extend(msg_ids.iter().copied()),
                "qstar" => {
                    ids.extend(nets.qstar_util.as_ref().map(AgentNet::param_ids).unwrap_or_default());
                    ids.extend(nets.central.as_ref().map(CentralMixer::param_ids).unwrap_or_default());
                }
                _ => {
                    ids.extend(model.utility_param_ids());
                    ids.extend(nets.mixer.param_ids());
                }
            }
        }
        lines.push(run_subset(
            name,
            |t, p| {
                let mut noise = SmallRng::seed_from_u64(17);
                let fw = model.forward_losses(t, p, &batch, &y, 0.4, &mut noise).map_err(to_ad)?;
                Ok(fw.total)
            },
            &params,
            &ids,
        )?);
    }
    lines.push(run(
        "loss_alpha",
        |t, p| crate::pac::loss_alpha(t, p[0], 1.1, 0.4),
        &[Tensor::scalar(-0.07)],
    )?);
    Ok(lines)
}

/// Every architecture and loss term, plus the negative control on request.
pub fn run_suite(negative_control: bool) -> pac_autodiff::Result<Vec<CheckLine>> {
    let mut lines = architecture_checks(negative_control)?;
    lines.extend(loss_checks()?);
    Ok(lines)
}

/// Relative gap between the closed-form KL of a random diagonal-Gaussian
/// pair and a Monte-Carlo estimate from `samples` draws.
pub fn kl_monte_carlo_gap(samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = SmallRng::seed_from_u64(seed);
    let d = 4;
    let draw =
        |rng: &mut SmallRng, lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(lo..hi)).collect() };
    let (mu_p, lv_p) = (draw(&mut rng, -1.0, 1.0), draw(&mut rng, -0.5, 0.5));
    let (mu_q, lv_q) = (draw(&mut rng, -1.0, 1.0), draw(&mut rng, -0.5, 0.5));

    let mut tape = Tape::<f64>::new();
    let t = |tape: &mut Tape<f64>, v: &[f64]| tape.constant(Tensor::from_f64(&[d], v).expect("shape"));
    let (a, b, c, e) = (
        t(&mut tape, &mu_p),
        t(&mut tape, &lv_p),
        t(&mut tape, &mu_q),
        t(&mut tape, &lv_q),
    );
    let kl = kl_diag_gaussian(&mut tape, a, b, c, e).expect("kl");
    let closed = tape.value(kl).item();

    let log_density = |x: &[f64], mu: &[f64], lv: &[f64]| -> f64 {
        (0..d)
            .map(|j| -0.5 * (lv[j] + (x[j] - mu[j]).powi(2) / lv[j].exp() + (2.0 * std::f64::consts::PI).ln()))
            .sum()
    };
    let mut acc = 0.0;
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[j] = mu_p[j] + (0.5 * lv_p[j]).exp() * z;
        }
        acc += log_density(&x, &mu_p, &lv_p) - log_density(&x, &mu_q, &lv_q);
    }
    let mc = acc / samples as f64;
    (closed, mc)
}

/// Number of negative `∂Q_tot/∂qᵢ` entries over `draws` random states and
/// utilities, each draw with a freshly initialised hypernetwork mixer.
pub fn mixer_gradient_violations(draws: usize, seed: u64) -> usize {
    let mut rng = SmallRng::seed_from_u64(seed);
    let (n, s) = (4, 6);
    let mut violations = 0;
    for _ in 0..draws {
        let mut store = ParamStore::new();
        let mixer = MonotonicMixer::Qmix(QmixMixer::new(&mut store, &mut rng, "m", s, n, 8, 8));
        let state = rand_tensor(&mut rng, &[1, s]).cast::<f32>();
        let q = rand_tensor(&mut rng, &[1, n]).map(|v| v * 5.0).cast::<f32>();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let sv = tape.constant(state);
        let qv = tape.param(q);
        let y = mixer.forward(&mut tape, &p, sv, qv).expect("mixer");
        let g = tape.backward(y).expect("backward").get(qv);
        violations += g.data().iter().filter(|&&v| v < 0.0).count();
    }
    violations
}
