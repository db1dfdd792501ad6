//! Experiment configuration: a TOML document with one section per module.

use std::fmt;
use std::path::{Path, PathBuf};

use graphnav_core::bundle::EnvConfig;
use graphnav_core::eval::{perturbation_grid, PerturbSpec};
use graphnav_core::optim::OptimConfig;
use graphnav_core::train::TrainConfig;
use graphnav_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// Invalid or unreadable configuration. The message names the offending
/// field as `section.key`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub alpha: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection { alpha: TrainConfig::default().alpha }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub group_size: usize,
    pub warmup_steps: usize,
    pub rl_steps: usize,
    /// Buffer size that triggers a supervised pass on hard cases, or `"off"`.
    #[serde(with = "trigger")]
    pub hard_case_trigger: Option<usize>,
    pub lr_sft: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            group_size: t.group_size,
            warmup_steps: t.warmup_steps,
            rl_steps: t.rl_steps,
            hard_case_trigger: t.hard_case_trigger,
            lr_sft: t.lr_sft,
        }
    }
}

mod trigger {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Count(usize),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(m) => s.serialize_u64(*m as u64),
            None => s.serialize_str("off"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Count(m) => Ok(Some(m)),
            Repr::Word(w) if w == "off" => Ok(None),
            Repr::Word(w) => Err(de::Error::custom(format!(
                "expected a positive integer or \"off\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Global perturbation probabilities; `0` is the unperturbed row.
    pub global_p: Vec<f64>,
    /// Early perturbation lengths.
    pub early_n: Vec<usize>,
    /// Evaluation seeds averaged in the summary rows.
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { global_p: vec![0.0, 0.2, 0.4, 0.8], early_n: vec![1, 2, 3], seeds: vec![0, 1, 2] }
    }
}

impl EvalSection {
    pub fn grid(&self) -> Vec<PerturbSpec> {
        perturbation_grid(&self.global_p, &self.early_n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Where artifacts go. Not part of the echoed config, since it does not
    /// influence any result.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub reward: RewardSection,
    pub optim: OptimConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            reward: RewardSection::default(),
            optim: OptimConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

fn field_error(section: &str, e: CoreError) -> ConfigError {
    match e {
        CoreError::InvalidParameter { name, reason } => {
            let section = if name == "alpha" { "reward" } else { section };
            ConfigError(format!("invalid config field `{section}.{name}`: {reason}"))
        }
        other => ConfigError(format!("invalid config section `{section}`: {other}")),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Checks every section against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| field_error("env", e))?;
        self.optim.validate().map_err(|e| field_error("optim", e))?;
        self.train_config().validate().map_err(|e| field_error("train", e))?;
        for &p in &self.eval.global_p {
            PerturbSpec::Global { p }.validate().map_err(|e| field_error("eval", e))?;
        }
        if self.eval.early_n.contains(&0) {
            return Err(ConfigError("invalid config field `eval.early_n`: lengths must be at least 1".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(ConfigError("invalid config field `eval.seeds`: at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            group_size: self.train.group_size,
            warmup_steps: self.train.warmup_steps,
            rl_steps: self.train.rl_steps,
            hard_case_trigger: self.train.hard_case_trigger,
            lr_sft: self.train.lr_sft,
            alpha: self.reward.alpha,
            optim: self.optim.clone(),
            seed: self.seed,
        }
    }

    /// The config as embedded in every artifact.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
