//! Value-factorisation baselines. They share the learner, trainer loop and
//! evaluation protocol with PAC; only the networks built and the loss terms
//! assembled differ, as selected by [`LearnerConfig`].

use crate::config::{Algo, LearnerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Additive mixing, unweighted TD.
    Vdn,
    /// Monotonic hypernetwork mixing, unweighted TD.
    Qmix,
    /// Monotonic mixing regressed with optimistic weights towards targets of
    /// an unrestricted critic.
    OwQmix,
}

impl BaselineKind {
    pub fn algo(self) -> Algo {
        match self {
            BaselineKind::Vdn => Algo::Vdn,
            BaselineKind::Qmix => Algo::Qmix,
            BaselineKind::OwQmix => Algo::OwQmix,
        }
    }

    pub fn from_algo(algo: Algo) -> Option<Self> {
        match algo {
            Algo::Vdn => Some(BaselineKind::Vdn),
            Algo::Qmix => Some(BaselineKind::Qmix),
            Algo::OwQmix => Some(BaselineKind::OwQmix),
            Algo::Pac => None,
        }
    }

    /// Default learner configuration for this baseline.
    pub fn config(self) -> LearnerConfig {
        LearnerConfig::for_algo(self.algo())
    }
}

/// `Q_tot = Σᵢ qᵢ`.
pub fn vdn_qtot(q: &[f32]) -> f32 {
    q.iter().sum()
}
