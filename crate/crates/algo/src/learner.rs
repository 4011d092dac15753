use pac_autodiff::{clip_global_norm, Adam, AdamConfig, Tape, Tensor};
use pac_envs::EnvSpec;
use pac_nets::{sync_targets, ParamStore};
use rand::Rng;

use crate::batch::EpisodeBatch;
use crate::config::LearnerConfig;
use crate::error::{AlgoError, Result};
use crate::model::Model;
use crate::pac::loss_alpha;

/// Scalar diagnostics of one update. Terms absent from the active
/// algorithm are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_lp: Option<f64>,
    pub l_ca: Option<f64>,
    pub l_ib: Option<f64>,
    pub l_qstar: Option<f64>,
    pub l_qtot: Option<f64>,
    pub l_alpha: Option<f64>,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Online and target parameters with their optimisers.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: Model,
    pub params: ParamStore,
    pub target: ParamStore,
    /// Single-entry store holding `log α`, shape `[1]`.
    pub log_alpha: ParamStore,
    pub adam: Adam,
    pub alpha_adam: Adam,
    pub updates: u64,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(cfg: LearnerConfig, spec: &EnvSpec, rng: &mut R) -> Result<Self> {
        let (model, params) = Model::new(cfg, spec, rng)?;
        let mut log_alpha = ParamStore::new();
        log_alpha.add("log_alpha", Tensor::scalar(model.cfg.init_log_alpha as f32));
        Ok(Self::from_parts(
            model,
            params.clone(),
            params,
            log_alpha,
            None,
            None,
            0,
        ))
    }

    /// Reassembles a learner; missing optimiser states start fresh.
    pub fn from_parts(
        model: Model,
        params: ParamStore,
        target: ParamStore,
        log_alpha: ParamStore,
        adam: Option<Adam>,
        alpha_adam: Option<Adam>,
        updates: u64,
    ) -> Self {
        let adam = adam.unwrap_or_else(|| Adam::new(AdamConfig::with_lr(model.cfg.lr), params.tensors()));
        let alpha_adam =
            alpha_adam.unwrap_or_else(|| Adam::new(AdamConfig::with_lr(model.cfg.lr_alpha), log_alpha.tensors()));
        Self {
            model,
            params,
            target,
            log_alpha,
            adam,
            alpha_adam,
            updates,
        }
    }

    pub fn cfg(&self) -> &LearnerConfig {
        &self.model.cfg
    }

    /// Temperature in use: the fixed ablation value or `exp(log α)`.
    pub fn alpha(&self) -> f64 {
        match self.model.cfg.ablations.fixed_alpha {
            Some(a) => a,
            None => (self.log_alpha.tensors()[0].data()[0] as f64).exp(),
        }
    }

    pub fn sync_targets(&mut self) {
        sync_targets(&self.params, &mut self.target);
    }

    /// One optimiser step on the end-to-end loss followed by an independent
    /// temperature step.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &EpisodeBatch, rng: &mut R) -> Result<LossBreakdown> {
        let y = self.model.targets(&self.target, batch)?;
        let alpha = self.alpha();

        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let fw = self.model.forward_losses(&mut tape, &p, batch, &y, alpha, rng)?;
        let scalar = |v| tape.value(v).item() as f64;
        let mut out = LossBreakdown {
            l_lp: fw.lp.map(scalar),
            l_ca: fw.ca.map(scalar),
            l_ib: fw.ib.map(|i| scalar(i.loss)),
            l_qstar: fw.qstar.map(scalar),
            l_qtot: Some(scalar(fw.qtot)),
            entropy: fw.entropy,
            total: scalar(fw.total),
            ..LossBreakdown::default()
        };
        if !out.total.is_finite() {
            return Err(AlgoError::Config(format!("non-finite loss {}", out.total)));
        }
        let grads = tape.backward(fw.total)?;
        let mut g: Vec<Tensor> = p.iter().map(|&v| grads.get(v)).collect();
        drop(tape);
        out.grad_norm = clip_global_norm(&mut g, self.model.cfg.grad_clip);
        self.adam.step(self.params.tensors_mut(), &g)?;

        if let Some(h) = fw.entropy {
            let h0 = self.model.target_entropy();
            match self.model.cfg.ablations.fixed_alpha {
                Some(a) => out.l_alpha = Some(a * (h - h0)),
                None => {
                    let mut tape = Tape::new();
                    let la = self.log_alpha.bind(&mut tape, true)[0];
                    let l = loss_alpha(&mut tape, la, h, h0)?;
                    out.l_alpha = Some(tape.value(l).item() as f64);
                    let g = tape.backward(l)?.get(la);
                    self.alpha_adam.step(self.log_alpha.tensors_mut(), &[g])?;
                }
            }
            out.alpha = Some(self.alpha());
        }
        self.updates += 1;
        Ok(out)
    }
}
