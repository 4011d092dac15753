use pac_autodiff::{gaussian_reparam_sample, Real, Result as AdResult, Tape, Tensor, Var};
use pac_envs::{EnvSpec, Observation};
use pac_nets::{
    aggregate_messages, AgentNet, CentralMixer, LinearMixer, MessageNets, MonotonicMixer, ParamId, ParamStore,
    QmixMixer,
};
use rand::Rng;

use crate::batch::{agent_input_row, message_input_row, EpisodeBatch};
use crate::config::{LearnerConfig, MessageSource, MixerKind, QstarAction};
use crate::error::{AlgoError, Result};
use crate::pac::{
    counterfactual_predict, lambda_returns, loss_ca, loss_ca_cross_entropy, loss_ib, loss_lp, loss_qstar, loss_qtot,
    masked_argmax, mean_entropy, probs_from_logp, total_loss, IbLoss,
};

/// Every network a learner owns. Optional members exist only for the
/// algorithms that use them.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    /// Per-agent utilities feeding the monotonic mixer.
    pub util: AgentNet,
    pub mixer: MonotonicMixer,
    pub policy: Option<AgentNet>,
    /// Per-agent utilities feeding the unrestricted critic.
    pub qstar_util: Option<AgentNet>,
    pub central: Option<CentralMixer>,
    pub messages: Option<MessageNets>,
}

/// Network layout plus the configuration and environment extents it was
/// built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: LearnerConfig,
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub nets: Nets,
}

/// Differentiable outputs of one minibatch pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub total: Var,
    pub lp: Option<Var>,
    pub ca: Option<Var>,
    pub ib: Option<IbLoss>,
    pub qstar: Option<Var>,
    pub qtot: Var,
    /// Mean policy entropy over valid agent-steps.
    pub entropy: Option<f64>,
    /// Counterfactual labels, agent rows of the replayed steps.
    pub labels: Option<Vec<usize>>,
    /// Greedy actions of the message-conditioned utilities.
    pub greedy: Vec<usize>,
}

fn concat_rows<T: Real>(tape: &mut Tape<T>, vs: &[Var]) -> AdResult<Var> {
    if vs.len() == 1 {
        Ok(vs[0])
    } else {
        tape.concat(vs, 0)
    }
}

impl Model {
    /// Builds the networks for `cfg` on `spec`, registering parameters in a
    /// fresh store in a fixed order.
    pub fn new<R: Rng + ?Sized>(cfg: LearnerConfig, spec: &EnvSpec, rng: &mut R) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let (n, k, o, s) = (spec.n_agents, spec.n_actions, spec.obs_dim, spec.state_dim);
        let d = cfg.dims;
        let agent_in = o + k + n;
        let msg_in = o + n;
        let mut store = ParamStore::new();

        let util_in = agent_in + if cfg.uses_messages() { d.msg_dim } else { 0 };
        let util = AgentNet::new(&mut store, rng, "util", util_in, d.hidden, k);
        let mixer = match cfg.mixer_kind() {
            MixerKind::Qmix => MonotonicMixer::Qmix(QmixMixer::new(
                &mut store,
                rng,
                "mixer",
                s,
                n,
                d.mixer_embed,
                d.hypernet_hidden,
            )),
            MixerKind::Linear => MonotonicMixer::Linear(LinearMixer::new(&mut store, rng, "mixer", s, n)),
            MixerKind::Vdn => MonotonicMixer::Vdn { n_agents: n },
        };
        let policy = cfg
            .uses_messages()
            .then(|| AgentNet::new(&mut store, rng, "policy", agent_in, d.hidden, k));
        let (qstar_util, central) = if cfg.has_qstar() {
            (
                Some(AgentNet::new(&mut store, rng, "qstar_util", agent_in, d.hidden, k)),
                Some(CentralMixer::new(&mut store, rng, "central", s, n, d.central_hidden)),
            )
        } else {
            (None, None)
        };
        let messages = cfg
            .uses_messages()
            .then(|| MessageNets::new(&mut store, rng, "msg", msg_in, msg_in, d.msg_hidden, d.msg_dim, k));

        let model = Self {
            cfg,
            n_agents: n,
            n_actions: k,
            obs_dim: o,
            state_dim: s,
            nets: Nets {
                util,
                mixer,
                policy,
                qstar_util,
                central,
                messages,
            },
        };
        Ok((model, store))
    }

    pub fn agent_input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    pub fn message_input_dim(&self) -> usize {
        self.obs_dim + self.n_agents
    }

    /// `H₀ = ratio · log |U|`.
    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy_ratio * (self.n_actions as f64).ln()
    }

    /// Parameters read when acting with utilities (message nets included).
    pub fn utility_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.nets.util.param_ids();
        if let Some(m) = &self.nets.messages {
            ids.extend(m.encoder.param_ids());
        }
        ids
    }

    pub fn policy_param_ids(&self) -> Vec<ParamId> {
        self.nets.policy.as_ref().map(AgentNet::param_ids).unwrap_or_default()
    }

    pub fn check_batch(&self, batch: &EpisodeBatch) -> Result<()> {
        let got = (batch.n_agents, batch.n_actions, batch.obs_dim, batch.state_dim);
        let want = (self.n_agents, self.n_actions, self.obs_dim, self.state_dim);
        if got != want {
            return Err(AlgoError::Episode(format!(
                "batch extents (n, K, obs, state) = {got:?}, model expects {want:?}"
            )));
        }
        Ok(())
    }

    /// Messages an agent's utility consumes, from the per-agent messages `m`.
    pub fn incoming<T: Real>(&self, tape: &mut Tape<T>, m: Var) -> AdResult<Var> {
        match self.cfg.message_source {
            MessageSource::Others => aggregate_messages(tape, m, self.n_agents),
            MessageSource::Own => Ok(m),
        }
    }

    /// Loss terms on `batch` with online parameters `p` and targets `y`
    /// (one per step row). Messages are sampled from `rng`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_losses<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        batch: &EpisodeBatch,
        y: &[f64],
        alpha: f64,
        rng: &mut R,
    ) -> Result<Forward> {
        self.check_batch(batch)?;
        let cfg = &self.cfg;
        let nets = &self.nets;
        let (n, k, tt) = (self.n_agents, self.n_actions, batch.max_len);
        let rows = batch.batch * n;
        let hidden = cfg.dims.hidden;

        let mut h_util = tape.constant(Tensor::zeros(&[rows, hidden]));
        let mut h_pol = h_util;
        let mut h_qs = h_util;
        let (mut q_ts, mut logp_ts, mut qs_ts, mut dec_ts, mut mu_ts) = (vec![], vec![], vec![], vec![], vec![]);
        for t in 0..tt {
            let x = tape.constant(batch.agent_inputs::<T>(t));
            let util_in = if let Some(msg) = &nets.messages {
                let e = tape.constant(batch.message_inputs::<T>(t));
                let mu = msg.encode(tape, p, e)?;
                let m = gaussian_reparam_sample(tape, mu, rng)?;
                let inc = self.incoming(tape, m)?;
                let others = aggregate_messages(tape, m, n)?;
                dec_ts.push(msg.decode(tape, p, e, others)?);
                mu_ts.push(mu);
                tape.concat(&[x, inc], 1)?
            } else {
                x
            };
            let (q, h) = nets.util.forward(tape, p, util_in, h_util)?;
            h_util = h;
            q_ts.push(q);
            if let Some(pol) = &nets.policy {
                let (logits, h) = pol.forward(tape, p, x, h_pol)?;
                h_pol = h;
                logp_ts.push(tape.masked_log_softmax(logits, batch.avail_slot(t))?);
            }
            if let Some(qn) = &nets.qstar_util {
                let (qs, h) = qn.forward(tape, p, x, h_qs)?;
                h_qs = h;
                qs_ts.push(qs);
            }
        }

        let avail = batch.avail_range(0, tt);
        let agent_valid = batch.agent_filled();
        let n_steps = batch.valid_steps();
        let states = tape.constant(batch.states_range::<T>(0, tt));
        let step_rows = batch.step_rows();

        let q_all = concat_rows(tape, &q_ts)?;
        let q_vals = tape.value(q_all).to_f64_vec();
        let greedy = masked_argmax(&q_vals, avail, k);

        let q_taken = tape.gather(q_all, &batch.actions)?;
        let q_taken = tape.reshape(q_taken, &[step_rows, n])?;
        let qtot = nets.mixer.forward(tape, p, states, q_taken)?;
        let w = if cfg.weighted() { cfg.w_const } else { 1.0 };
        let l_qtot = loss_qtot(tape, qtot, y, &batch.filled, w)?;

        let mut l_qstar = None;
        let mut labels = None;
        if let (Some(_), Some(central)) = (&nets.qstar_util, &nets.central) {
            let qs_all = concat_rows(tape, &qs_ts)?;
            let sel = match cfg.qstar_action {
                QstarAction::Taken => &batch.actions,
                QstarAction::Greedy => &greedy,
            };
            let qs_sel = tape.gather(qs_all, sel)?;
            let qs_sel = tape.reshape(qs_sel, &[step_rows, n])?;
            let pred = central.forward(tape, p, states, qs_sel)?;
            l_qstar = Some(loss_qstar(tape, pred, y, &batch.filled)?);

            if cfg.ca_active() || cfg.ib_active() {
                let qs_vals = tape.value(qs_all).to_f64_vec();
                let state_vals = tape.value(states).to_f64_vec();
                let eval = central_evaluator(central, tape, p, self.state_dim, n);
                let pred = counterfactual_predict(
                    eval,
                    &state_vals,
                    self.state_dim,
                    &qs_vals,
                    &batch.actions,
                    avail,
                    &batch.filled,
                    n,
                    k,
                )?;
                labels = Some(pred.labels);
            }
        }

        let mut l_lp = None;
        let mut l_ca = None;
        let mut entropy = None;
        if !logp_ts.is_empty() {
            let logp_all = concat_rows(tape, &logp_ts)?;
            let logp_vals = tape.value(logp_all).to_f64_vec();
            entropy = Some(mean_entropy(&logp_vals, avail, &agent_valid, k));

            let mut frozen = p.to_vec();
            for id in nets.mixer.param_ids() {
                frozen[id.index()] = tape.detach(p[id.index()])?;
            }
            let mixer = &nets.mixer;
            l_lp = Some(loss_lp(
                tape,
                |tape: &mut Tape<T>, s, v| mixer.forward(tape, &frozen, s, v),
                states,
                logp_all,
                &q_vals,
                alpha,
                avail,
                &batch.filled,
                n,
            )?);

            if let (true, Some(lab)) = (cfg.ca_active(), &labels) {
                l_ca = Some(if cfg.ablations.ce_loss {
                    loss_ca_cross_entropy(tape, logp_all, lab, avail, &agent_valid, n_steps)?
                } else {
                    let pi = probs_from_logp(&logp_vals, avail);
                    loss_ca(
                        tape,
                        cfg.ca_form,
                        logp_all,
                        &pi,
                        &q_vals,
                        lab,
                        &batch.actions,
                        avail,
                        &agent_valid,
                        n_steps,
                    )?
                });
            }
        }

        let mut l_ib = None;
        if let (true, Some(msg), Some(lab)) = (cfg.ib_active(), &nets.messages, &labels) {
            let dec_all = concat_rows(tape, &dec_ts)?;
            let mu_all = concat_rows(tape, &mu_ts)?;
            l_ib = Some(loss_ib(
                tape,
                dec_all,
                lab,
                mu_all,
                p[msg.prior_mu.index()],
                p[msg.prior_logvar.index()],
                cfg.beta,
                &agent_valid,
            )?);
        }

        let lw = cfg.loss_weights;
        let total = total_loss(
            tape,
            &[
                (l_lp, lw.lp),
                (l_ca, lw.ca),
                (l_ib.map(|i| i.loss), lw.ib),
                (l_qstar, lw.qstar),
                (Some(l_qtot), lw.qtot),
            ],
        )?;
        Ok(Forward {
            total,
            lp: l_lp,
            ca: l_ca,
            ib: l_ib,
            qstar: l_qstar,
            qtot: l_qtot,
            entropy,
            labels,
            greedy,
        })
    }

    /// TD(λ) targets for every step row of `batch` (zero on padding),
    /// bootstrapping from the target parameters: the unrestricted critic
    /// when present, otherwise the monotonic `Q_tot`, both at the greedy
    /// actions of the target utilities.
    pub fn targets<T: Real>(&self, target: &ParamStore<T>, batch: &EpisodeBatch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let nets = &self.nets;
        let (n, k, tt, bsz) = (self.n_agents, self.n_actions, batch.max_len, batch.batch);
        let rows = bsz * n;
        let hidden = self.cfg.dims.hidden;
        let mut tape = Tape::<T>::new();
        let mut ids = self.utility_param_ids();
        ids.extend(nets.mixer.param_ids());
        if let (Some(qn), Some(c)) = (&nets.qstar_util, &nets.central) {
            ids.extend(qn.param_ids());
            ids.extend(c.param_ids());
        }
        let p = target.bind_only(&mut tape, &ids, false);

        let mut h_util = tape.constant(Tensor::zeros(&[rows, hidden]));
        let mut h_qs = h_util;
        let (mut q_ts, mut qs_ts) = (vec![], vec![]);
        for t in 0..=tt {
            let x = tape.constant(batch.agent_inputs::<T>(t));
            let util_in = if let Some(msg) = &nets.messages {
                let e = tape.constant(batch.message_inputs::<T>(t));
                let mu = msg.encode(&mut tape, &p, e)?;
                let inc = self.incoming(&mut tape, mu)?;
                tape.concat(&[x, inc], 1)?
            } else {
                x
            };
            let (q, h) = nets.util.forward(&mut tape, &p, util_in, h_util)?;
            h_util = h;
            if let Some(qn) = &nets.qstar_util {
                let (qs, h) = qn.forward(&mut tape, &p, x, h_qs)?;
                h_qs = h;
                if t > 0 {
                    qs_ts.push(qs);
                }
            }
            if t > 0 {
                q_ts.push(q);
            }
        }

        let step_rows = batch.step_rows();
        let q_next = concat_rows(&mut tape, &q_ts)?;
        let q_vals = tape.value(q_next).to_f64_vec();
        let greedy = masked_argmax(&q_vals, batch.avail_range(1, tt + 1), k);
        let states = tape.constant(batch.states_range::<T>(1, tt + 1));
        let v = match &nets.central {
            Some(central) => {
                let qs_next = concat_rows(&mut tape, &qs_ts)?;
                let sel = tape.gather(qs_next, &greedy)?;
                let sel = tape.reshape(sel, &[step_rows, n])?;
                central.forward(&mut tape, &p, states, sel)?
            }
            None => {
                let sel = tape.gather(q_next, &greedy)?;
                let sel = tape.reshape(sel, &[step_rows, n])?;
                nets.mixer.forward(&mut tape, &p, states, sel)?
            }
        };
        let v = tape.value(v).to_f64_vec();

        let mut y = vec![0.0; step_rows];
        for b in 0..bsz {
            let len = batch.lens[b];
            let rewards: Vec<f64> = (0..len).map(|t| batch.rewards[t * bsz + b] as f64).collect();
            let v_next: Vec<f64> = (0..len).map(|t| v[t * bsz + b]).collect();
            let terminated = batch.terminated[(len - 1) * bsz + b];
            let g = lambda_returns(&rewards, &v_next, terminated, self.cfg.gamma, self.cfg.lambda);
            for (t, gt) in g.into_iter().enumerate() {
                y[t * bsz + b] = gt;
            }
        }
        Ok(y)
    }
}

/// Per-agent values at the first decision point of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepValues {
    /// Utilities `[n, K]`, conditioned on message means.
    pub utilities: Vec<f64>,
    /// Unrestricted-critic utilities `[n, K]`, when the learner has them.
    pub qstar: Option<Vec<f64>>,
}

impl Model {
    /// Utilities (and critic utilities) for `obs` as the opening
    /// observation of an episode.
    pub fn initial_values(&self, params: &ParamStore, obs: &Observation) -> Result<StepValues> {
        let (n, k, o) = (self.n_agents, self.n_actions, self.obs_dim);
        let hidden = self.cfg.dims.hidden;
        let mut tape = Tape::<f32>::new();
        let p = params.bind(&mut tape, false);
        let rows: Vec<f32> = (0..n)
            .flat_map(|i| agent_input_row(&obs.obs[i * o..][..o], None, i, k, n))
            .collect();
        let x = tape.constant(Tensor::new(vec![n, self.agent_input_dim()], rows)?);
        let h0 = tape.constant(Tensor::zeros(&[n, hidden]));
        let util_in = match &self.nets.messages {
            Some(msg) => {
                let rows: Vec<f32> = (0..n)
                    .flat_map(|i| message_input_row(&obs.obs[i * o..][..o], i, n))
                    .collect();
                let e = tape.constant(Tensor::new(vec![n, self.message_input_dim()], rows)?);
                let mu = msg.encode(&mut tape, &p, e)?;
                let inc = self.incoming(&mut tape, mu)?;
                tape.concat(&[x, inc], 1)?
            }
            None => x,
        };
        let (q, _) = self.nets.util.forward(&mut tape, &p, util_in, h0)?;
        let qstar = match &self.nets.qstar_util {
            Some(qn) => {
                let (qs, _) = qn.forward(&mut tape, &p, x, h0)?;
                Some(tape.value(qs).to_f64_vec())
            }
            None => None,
        };
        Ok(StepValues {
            utilities: tape.value(q).to_f64_vec(),
            qstar,
        })
    }

    /// Mixes `rows` per-agent value vectors `q` (`rows × n`) under
    /// `states` (`rows × state_dim`): through the unrestricted critic when
    /// `central` is set, else through the monotonic mixer.
    pub fn mix(&self, params: &ParamStore, states: &[f64], q: &[f64], rows: usize, central: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::<f32>::new();
        let p = params.bind(&mut tape, false);
        let s = tape.constant(Tensor::from_f64(&[rows, self.state_dim], states)?);
        let qv = tape.constant(Tensor::from_f64(&[rows, self.n_agents], q)?);
        let out = if central {
            let c = self
                .nets
                .central
                .as_ref()
                .ok_or_else(|| AlgoError::Config("learner has no unrestricted critic".into()))?;
            c.forward(&mut tape, &p, s, qv)?
        } else {
            self.nets.mixer.forward(&mut tape, &p, s, qv)?
        };
        Ok(tape.value(out).to_f64_vec())
    }
}

/// Evaluates the central mixer on plain inputs with the parameter values
/// currently bound on `tape`, on a private scratch tape.
pub fn central_evaluator<'a, T: Real>(
    central: &'a CentralMixer,
    tape: &Tape<T>,
    p: &[Var],
    state_dim: usize,
    n_agents: usize,
) -> impl FnMut(&[f64], &[f64], usize) -> AdResult<Vec<f64>> + 'a {
    let values: Vec<(usize, Tensor<T>)> = central
        .param_ids()
        .into_iter()
        .map(|id| (id.index(), tape.value(p[id.index()]).clone()))
        .collect();
    let slots = p.len();
    move |s: &[f64], q: &[f64], rows: usize| {
        let mut sc = Tape::<T>::new();
        let ph = sc.constant(Tensor::scalar(T::zero()));
        let mut vars = vec![ph; slots];
        for (i, t) in &values {
            vars[*i] = sc.constant(t.clone());
        }
        let sv = sc.constant(Tensor::from_f64(&[rows, state_dim], s)?);
        let qv = sc.constant(Tensor::from_f64(&[rows, n_agents], q)?);
        let out = central.forward(&mut sc, &vars, sv, qv)?;
        Ok(sc.value(out).to_f64_vec())
    }
}
