use serde::{Deserialize, Serialize};

use crate::error::{AlgoError, Result};

/// Which learner is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    #[default]
    Pac,
    Qmix,
    OwQmix,
    Vdn,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Pac, Algo::Qmix, Algo::OwQmix, Algo::Vdn];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Pac => "pac",
            Algo::Qmix => "qmix",
            Algo::OwQmix => "ow_qmix",
            Algo::Vdn => "vdn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    #[default]
    Qmix,
    /// Single state-conditioned layer without activation.
    Linear,
    Vdn,
}

/// Reading of the counterfactual assistance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CaForm {
    /// `Σᵢ log πᵢ(uᵢ) · Aᵢ` at the taken action, with the baseline summed
    /// over actions other than the label.
    Literal,
    /// `−log πᵢ(û*ᵢ) · Aᵢ` with the baseline `Σ_u π(u) q(u)`.
    #[default]
    Directed,
}

/// Joint action at which the unrestricted critic is regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QstarAction {
    /// Actions stored in the replay episode.
    #[default]
    Taken,
    /// Per-agent argmax of the message-conditioned utilities.
    Greedy,
}

/// How a PAC agent picks actions at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalActor {
    /// Argmax of the message-conditioned utilities, using message means.
    #[default]
    Utility,
    /// Argmax of the policy.
    Policy,
}

/// Messages fed into an agent's utility network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MessageSource {
    /// Mean over the other agents.
    #[default]
    Others,
    Own,
}

/// Multipliers on the end-to-end loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lp: f64,
    pub ca: f64,
    pub ib: f64,
    pub qstar: f64,
    pub qtot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lp: 1.0,
            ca: 1.0,
            ib: 1.0,
            qstar: 1.0,
            qtot: 1.0,
        }
    }
}

/// Ablation switches; all off reproduces full PAC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Freeze the temperature at this value.
    pub fixed_alpha: Option<f64>,
    /// Drop the information-bottleneck loss.
    pub no_info: bool,
    /// Replace the assistance loss by cross-entropy towards the labels.
    pub ce_loss: bool,
    /// Drop both the information-bottleneck and the assistance loss.
    pub disabled: bool,
    /// Remove the unrestricted critic; needs `disabled`.
    pub no_qstar: bool,
}

/// Network widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetDims {
    pub hidden: usize,
    pub msg_dim: usize,
    pub msg_hidden: usize,
    pub mixer_embed: usize,
    pub hypernet_hidden: usize,
    pub central_hidden: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            hidden: 64,
            msg_dim: 8,
            msg_hidden: 64,
            mixer_embed: 32,
            hypernet_hidden: 64,
            central_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub algo: Algo,
    /// Defaults to `vdn` for the VDN learner and `qmix` otherwise.
    pub mixer: Option<MixerKind>,
    pub lr: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub w_const: f64,
    pub init_log_alpha: f64,
    /// Target entropy as a fraction of `log |U|`.
    pub target_entropy_ratio: f64,
    pub grad_clip: f64,
    pub ca_form: CaForm,
    pub qstar_action: QstarAction,
    pub eval_actor: EvalActor,
    pub message_source: MessageSource,
    pub loss_weights: LossWeights,
    pub ablations: Ablations,
    pub dims: NetDims,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Pac,
            mixer: None,
            lr: 1e-3,
            lr_alpha: 3e-4,
            gamma: 0.99,
            lambda: 0.6,
            beta: 1e-3,
            w_const: 0.5,
            init_log_alpha: -0.07,
            target_entropy_ratio: 0.3,
            grad_clip: 10.0,
            ca_form: CaForm::Directed,
            qstar_action: QstarAction::Taken,
            eval_actor: EvalActor::Utility,
            message_source: MessageSource::Others,
            loss_weights: LossWeights::default(),
            ablations: Ablations::default(),
            dims: NetDims::default(),
        }
    }
}

impl LearnerConfig {
    pub fn for_algo(algo: Algo) -> Self {
        Self {
            algo,
            ..Self::default()
        }
    }

    pub fn mixer_kind(&self) -> MixerKind {
        self.mixer.unwrap_or(match self.algo {
            Algo::Vdn => MixerKind::Vdn,
            _ => MixerKind::Qmix,
        })
    }

    /// Whether the unrestricted critic and its utilities exist.
    pub fn has_qstar(&self) -> bool {
        match self.algo {
            Algo::Pac => !self.ablations.no_qstar,
            Algo::OwQmix => true,
            Algo::Qmix | Algo::Vdn => false,
        }
    }

    pub fn uses_messages(&self) -> bool {
        self.algo == Algo::Pac
    }

    /// Information-bottleneck loss active.
    pub fn ib_active(&self) -> bool {
        self.algo == Algo::Pac && !self.ablations.no_info && !self.ablations.disabled
    }

    /// Assistance (or its cross-entropy replacement) active.
    pub fn ca_active(&self) -> bool {
        self.algo == Algo::Pac && !self.ablations.disabled
    }

    /// Optimistic weighting of the `Q_tot` regression.
    pub fn weighted(&self) -> bool {
        match self.algo {
            Algo::Pac => !self.ablations.no_qstar,
            Algo::OwQmix => true,
            Algo::Qmix | Algo::Vdn => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AlgoError::Config(m));
        let positive = [
            ("lr", self.lr),
            ("lr_alpha", self.lr_alpha),
            ("gamma", self.gamma),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.gamma > 1.0 {
            return bad(format!("gamma must be at most 1, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.beta >= 0.0 && self.w_const > 0.0 && self.target_entropy_ratio >= 0.0) {
            return bad("beta and target_entropy_ratio must be non-negative, w_const positive".into());
        }
        let d = &self.dims;
        if [
            d.hidden,
            d.msg_dim,
            d.msg_hidden,
            d.mixer_embed,
            d.hypernet_hidden,
            d.central_hidden,
        ]
        .contains(&0)
        {
            return bad("network widths must be positive".into());
        }
        let a = &self.ablations;
        let any_ablation = a.fixed_alpha.is_some() || a.no_info || a.ce_loss || a.disabled || a.no_qstar;
        if self.algo != Algo::Pac && any_ablation {
            return bad(format!("ablation flags apply to pac only, not {}", self.algo.name()));
        }
        if a.no_qstar && !a.disabled {
            return bad("no_qstar removes the critic that produces counterfactual labels; it requires disabled".into());
        }
        if let Some(v) = a.fixed_alpha {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("fixed_alpha must be non-negative, got {v}"));
            }
        }
        if self.algo == Algo::Vdn && self.mixer_kind() != MixerKind::Vdn {
            return bad("the vdn learner uses the additive mixer".into());
        }
        Ok(())
    }
}
