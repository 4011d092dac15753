use pac_algo::{Ablations, Algo, LearnerConfig};
use pac_envs::{Env, EnvSpec, MatrixGame, MatrixGameConfig, PredatorPrey, PredatorPreyConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// Environment selection; the `name` key picks the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    MatrixGame(MatrixGameConfig),
    PredatorPrey(PredatorPreyConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::MatrixGame(MatrixGameConfig::default())
    }
}

impl EnvConfig {
    pub const PRESETS: [&'static str; 4] = [
        "matrix_game",
        "predator_prey",
        "predator_prey_desk",
        "predator_prey_paper",
    ];

    /// `predator_prey` is the desk-scale grid.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "matrix_game" => EnvConfig::MatrixGame(MatrixGameConfig::default()),
            "predator_prey" | "predator_prey_desk" => EnvConfig::PredatorPrey(PredatorPreyConfig::desk(0.0)),
            "predator_prey_paper" => EnvConfig::PredatorPrey(PredatorPreyConfig::paper(0.0)),
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::MatrixGame(_) => "matrix_game",
            EnvConfig::PredatorPrey(_) => "predator_prey",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        Ok(match self {
            EnvConfig::MatrixGame(c) => Box::new(MatrixGame::new(c.clone())?),
            EnvConfig::PredatorPrey(c) => Box::new(PredatorPrey::new(c.clone())?),
        })
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        Ok(self.build()?.spec().clone())
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_env_steps: u64,
    /// Episodes per minibatch.
    pub batch_size: usize,
    /// Episodes held by the replay buffer.
    pub buffer_capacity: usize,
    pub updates_per_episode: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    /// Episodes between target-network synchronisations.
    pub target_update_interval: u64,
    /// Environment steps between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps between training-log rows; 0 logs only at
    /// evaluations.
    pub log_interval: u64,
    /// Rollout threads; 0 collects inline on the trainer thread.
    pub workers: usize,
    /// Record elapsed time in the metrics. Off by default so that metrics
    /// files are reproducible byte for byte.
    pub log_wall_clock: bool,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            total_env_steps: 20_000,
            batch_size: 128,
            buffer_capacity: 10_000,
            updates_per_episode: 1,
            epsilon_start: 0.995,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 100_000,
            target_update_interval: 200,
            eval_interval: 10_000,
            eval_episodes: 32,
            log_interval: 0,
            workers: 1,
            log_wall_clock: false,
            env: EnvConfig::default(),
            learner: LearnerConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for an environment preset, including its step budget.
    pub fn for_env(name: &str) -> Result<Self> {
        let env = EnvConfig::preset(name).ok_or_else(|| {
            TrainError::Config(format!(
                "unknown env `{name}`; valid: {}",
                EnvConfig::PRESETS.join(", ")
            ))
        })?;
        let mut cfg = Self { env, ..Self::default() };
        match name {
            "matrix_game" => {}
            "predator_prey_paper" => cfg.total_env_steps = 2_000_000,
            _ => {
                cfg.total_env_steps = 300_000;
                cfg.buffer_capacity = 2_000;
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad(format!(
                "buffer_capacity {} is smaller than batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_end) || !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("epsilon values must lie in [0, 1]".into());
        }
        if self.epsilon_start < self.epsilon_end {
            return bad(format!(
                "epsilon_start {} is below epsilon_end {}",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if self.target_update_interval == 0 || self.eval_interval == 0 {
            return bad("target_update_interval and eval_interval must be positive".into());
        }
        self.learner.validate()?;
        self.env.build()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Layers defaults, an optional config document and `key.path=value`
    /// overrides, in increasing precedence. The environment preset comes
    /// from `env`, else from the document's `env.name`, else the matrix game.
    pub fn resolve(document: Option<&str>, env: Option<&str>, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = match document {
            Some(text) => text
                .parse()
                .map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        let file_env = file
            .get("env")
            .and_then(|e| e.get("name"))
            .and_then(|n| n.as_str())
            .map(str::to_owned);
        let preset = env
            .map(str::to_owned)
            .or(file_env)
            .unwrap_or_else(|| "matrix_game".into());
        let mut merged =
            toml::Table::try_from(Self::for_env(&preset)?).map_err(|e| TrainError::Config(e.to_string()))?;
        merge(&mut merged, file);
        if let Some(name) = env {
            if let Some(toml::Value::Table(t)) = merged.get_mut("env") {
                t.insert(
                    "name".into(),
                    toml::Value::String(EnvConfig::preset(name).unwrap().name().into()),
                );
            }
        }
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c=value`. The value is read as a TOML literal, falling back to
/// a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| TrainError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(TrainError::Config(format!("malformed override key `{path}`")));
    }
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| TrainError::Config(format!("override `{path}`: `{k}` is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Named ablation variants; each maps to exactly one flag combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    FixedAlpha,
    NoInfo,
    CeLoss,
    Disabled,
    NoQstar,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::FixedAlpha,
        Variant::NoInfo,
        Variant::CeLoss,
        Variant::Disabled,
        Variant::NoQstar,
    ];

    pub const FIXED_ALPHA: f64 = 0.5;

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::FixedAlpha => "fixed_alpha",
            Variant::NoInfo => "no_info",
            Variant::CeLoss => "ce_loss",
            Variant::Disabled => "disabled",
            Variant::NoQstar => "no_qstar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn ablations(self) -> Ablations {
        let mut a = Ablations::default();
        match self {
            Variant::Full => {}
            Variant::FixedAlpha => a.fixed_alpha = Some(Self::FIXED_ALPHA),
            Variant::NoInfo => a.no_info = true,
            Variant::CeLoss => a.ce_loss = true,
            Variant::Disabled => a.disabled = true,
            Variant::NoQstar => {
                a.disabled = true;
                a.no_qstar = true;
            }
        }
        a
    }

    pub fn apply(self, learner: &mut LearnerConfig) {
        learner.algo = Algo::Pac;
        learner.ablations = self.ablations();
    }
}
