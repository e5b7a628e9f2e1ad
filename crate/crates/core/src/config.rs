//! Experiment configuration: a TOML key tree with defaults for everything but the
//! environment and the victim.
//!
//! ```toml
//! seed = 3
//!
//! [env]
//! name = "point-goal"
//! epsilon = 0.05
//!
//! [victim]
//! checkpoint = "victim.ckpt"   # or: scripted = "gate-runner"
//!
//! [regularizer]
//! kind = "pc"
//! ```
//!
//! Unknown keys are rejected. Relative checkpoint paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{self, AdversaryReward, EnvKind, EnvOptions, GateRunner, GreedyGoal, PointGoalParams, RewardKind, VictimPolicy};
use crate::nn::PolicyHandle;
use crate::ppo::PpoConfig;
use crate::regularizers::{RegularizerKind, RegularizerSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("config line {line}{}: {msg}", key.as_ref().map(|k| format!(" (key `{k}`)")).unwrap_or_default())]
    Parse { line: usize, key: Option<String>, msg: String },
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), msg: msg.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    /// PointGoal reward variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardKind>,
    /// GridChain length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    /// ℓ∞ perturbation budget (single-agent tasks).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub adversary_reward: AdversaryReward,
}

fn default_epsilon() -> f64 {
    0.05
}

impl EnvSection {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            horizon: None,
            discount: None,
            reward: None,
            states: None,
            epsilon: default_epsilon(),
            adversary_reward: AdversaryReward::default(),
        }
    }

    pub fn options(&self) -> EnvOptions {
        EnvOptions { horizon: self.horizon, discount: self.discount, reward: self.reward, states: self.states }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedVictim {
    GateRunner,
    NaiveGateRunner,
    GreedyGoal,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<ScriptedVictim>,
}

impl VictimSection {
    pub fn checkpoint(path: impl Into<PathBuf>) -> Self {
        Self { checkpoint: Some(path.into()), scripted: None }
    }

    pub fn scripted(kind: ScriptedVictim) -> Self {
        Self { checkpoint: None, scripted: Some(kind) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrSection {
    pub enabled: bool,
    pub eta: f64,
    /// Temperature used while the controller is disabled.
    pub tau: f64,
}

impl Default for BrSection {
    fn default() -> Self {
        Self { enabled: true, eta: 10.0, tau: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub attack_steps: u64,
    pub victim_steps: u64,
    pub eval_episodes: usize,
    pub victim_eval_episodes: usize,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self { attack_steps: 1_000_000, victim_steps: 500_000, eval_episodes: 300, victim_eval_episodes: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Evaluate the adversary with its mode instead of sampling.
    pub deterministic_adversary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: [usize; 2],
    pub init_log_std: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { hidden: [64, 64], init_log_std: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Fill the `wall_seconds` metrics column; off keeps reruns byte-identical.
    pub record_wall_time: bool,
    /// Members sampled for the per-iteration entropy proxy of the union buffer.
    pub entropy_sample: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { record_wall_time: false, entropy_sample: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub env: EnvSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim: Option<VictimSection>,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub ppo: PpoConfig,
    /// PPO settings for `victim-train`.
    #[serde(default)]
    pub victim_ppo: PpoConfig,
    #[serde(default)]
    pub br: BrSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line overrides merged over a loaded config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub regularizer: Option<RegularizerKind>,
    pub br: Option<bool>,
}

impl ExperimentConfig {
    pub fn new(env: EnvSection, victim: Option<VictimSection>) -> Self {
        Self {
            seed: 0,
            env,
            victim,
            regularizer: RegularizerSpec::default(),
            ppo: PpoConfig::default(),
            victim_ppo: PpoConfig::default(),
            br: BrSection::default(),
            budget: BudgetSection::default(),
            eval: EvalSection::default(),
            network: NetworkSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.regularizer {
            self.regularizer.kind = k;
        }
        if let Some(b) = o.br {
            self.br.enabled = b;
        }
    }

    pub fn env_kind(&self) -> Result<EnvKind, ConfigError> {
        env::lookup(&self.env.name).map(|e| e.kind).map_err(|e| invalid("env.name", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.env_kind()?;
        let opts = self.env.options();
        let built = match kind {
            EnvKind::SingleAgent => env::make_single_agent(&self.env.name, &opts).map(|_| ()),
            EnvKind::TwoPlayer => env::make_game(&self.env.name, &opts).map(|_| ()),
        };
        built.map_err(|e| invalid("env", e.to_string()))?;
        if !(self.env.epsilon >= 0.0 && self.env.epsilon.is_finite()) {
            return Err(invalid("env.epsilon", format!("{} must be finite and >= 0", self.env.epsilon)));
        }
        if kind == EnvKind::TwoPlayer && self.env.adversary_reward != AdversaryReward::SparseIndicator {
            return Err(invalid("env.adversary_reward", "two-player games only support sparse-indicator"));
        }
        self.ppo.validate().map_err(|(k, m)| invalid(format!("ppo.{k}"), m))?;
        self.victim_ppo.validate().map_err(|(k, m)| invalid(format!("victim_ppo.{k}"), m))?;
        self.regularizer.validate().map_err(|(k, m)| invalid(format!("regularizer.{k}"), m))?;
        if self.regularizer.kind.uses_density() && self.ppo.batch_size <= self.regularizer.k {
            return Err(invalid(
                "ppo.batch_size",
                format!("{} must exceed regularizer.k = {}", self.ppo.batch_size, self.regularizer.k),
            ));
        }
        if !(self.br.eta > 0.0 && self.br.eta.is_finite()) {
            return Err(invalid("br.eta", format!("{} must be positive", self.br.eta)));
        }
        if !(self.br.tau > 0.0 && self.br.tau <= 1.0) {
            return Err(invalid("br.tau", format!("{} outside (0, 1]", self.br.tau)));
        }
        if self.budget.attack_steps == 0 {
            return Err(invalid("budget.attack_steps", "must be positive"));
        }
        if self.budget.eval_episodes == 0 {
            return Err(invalid("budget.eval_episodes", "must be positive"));
        }
        if self.budget.victim_eval_episodes == 0 {
            return Err(invalid("budget.victim_eval_episodes", "must be positive"));
        }
        if self.network.hidden.contains(&0) {
            return Err(invalid("network.hidden", "layer widths must be positive"));
        }
        if !self.network.init_log_std.is_finite() {
            return Err(invalid("network.init_log_std", "must be finite"));
        }
        if self.output.entropy_sample == 0 {
            return Err(invalid("output.entropy_sample", "must be positive"));
        }
        if let Some(v) = &self.victim {
            match (&v.checkpoint, v.scripted) {
                (Some(_), Some(_)) => return Err(invalid("victim", "set either `checkpoint` or `scripted`, not both")),
                (None, None) => return Err(invalid("victim", "set `checkpoint` or `scripted`")),
                (None, Some(s)) => {
                    let fits = matches!(
                        (kind, s),
                        (EnvKind::TwoPlayer, ScriptedVictim::GateRunner | ScriptedVictim::NaiveGateRunner)
                            | (EnvKind::SingleAgent, ScriptedVictim::GreedyGoal)
                    );
                    if !fits || (s == ScriptedVictim::GreedyGoal && self.env.name != "point-goal") {
                        return Err(invalid("victim.scripted", format!("{s:?} does not play {}", self.env.name)));
                    }
                }
                (Some(_), None) => {
                    if kind == EnvKind::TwoPlayer {
                        return Err(invalid("victim.checkpoint", "two-player victims are scripted"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds the frozen victim named by the `[victim]` section.
    pub fn load_victim(&self) -> Result<VictimPolicy, ConfigError> {
        let v = self.victim.as_ref().ok_or_else(|| invalid("victim", "missing section"))?;
        match (&v.checkpoint, v.scripted) {
            (Some(path), None) => PolicyHandle::load(path)
                .map(VictimPolicy::Learned)
                .map_err(|e| invalid("victim.checkpoint", e.to_string())),
            (None, Some(ScriptedVictim::GateRunner)) => Ok(VictimPolicy::GateRunner(GateRunner::default())),
            (None, Some(ScriptedVictim::NaiveGateRunner)) => Ok(VictimPolicy::GateRunner(GateRunner::naive())),
            (None, Some(ScriptedVictim::GreedyGoal)) => {
                let mut params = PointGoalParams::default();
                if let Some(h) = self.env.horizon {
                    params.horizon = h;
                }
                Ok(VictimPolicy::GreedyGoal(GreedyGoal { params }))
            }
            _ => Err(invalid("victim", "set exactly one of `checkpoint` or `scripted`")),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Parses and validates without resolving relative paths.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let offset = e.span().map_or(0, |s| s.start);
            let line = text[..offset.min(text.len())].matches('\n').count() + 1;
            ConfigError::Parse { line, key: key_path_at(text, offset), msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `section.key` for the key starting at byte `offset`, if the offset points at a key.
fn key_path_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') || !line.contains('=') {
        return None;
    }
    let section = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    Some(match section {
        Some(s) => format!("{s}.{key}"),
        None => key.to_string(),
    })
}

/// Reads, parses and validates `path`; relative victim checkpoints resolve against its
/// directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(ckpt) = cfg.victim.as_mut().and_then(|v| v.checkpoint.as_mut()) {
        if ckpt.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            *ckpt = base.join(&*ckpt);
        }
    }
    Ok(cfg)
}
