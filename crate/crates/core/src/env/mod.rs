//! Episodic decision processes, the built-in toy tasks, frozen victims and the two
//! adversarial wrappers that turn a victim plus a task into a single-agent MDP for the
//! attacker.

mod gate_run;
mod grid_chain;
mod point_goal;
mod threat;
mod victim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gate_run::{GateRun, GateRunParams};
pub use grid_chain::{GridChain, GridChainParams};
pub use point_goal::{PointGoal, PointGoalParams, RewardKind};
pub use threat::{AdversaryReward, FixedVictimMdp, PerturbationMdp, StateProjection};
pub use victim::{GateRunner, GreedyGoal, VictimPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeOver,
    #[error("action does not match the action spec: {0}")]
    BadAction(String),
    #[error("unknown environment `{0}` (expected one of: grid-chain, point-goal, gate-run)")]
    UnknownEnvironment(String),
    #[error("environment `{0}` is {1}, not usable here")]
    WrongKind(String, &'static str),
    #[error("invalid environment parameter: {0}")]
    InvalidParameter(String),
    #[error("victim observes {victim} coordinates but the environment emits {env}")]
    ObservationMismatch { victim: usize, env: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActionSpec {
    /// Box action space; actions outside `[low, high]` are clamped by the environment.
    Continuous { dim: usize, low: Vec<f64>, high: Vec<f64> },
    Discrete { n: usize },
}

impl ActionSpec {
    pub fn continuous_box(dim: usize, bound: f64) -> Self {
        ActionSpec::Continuous { dim, low: vec![-bound; dim], high: vec![bound; dim] }
    }

    /// Width of the policy head that parameterises this space.
    pub fn head_width(&self) -> usize {
        match self {
            ActionSpec::Continuous { dim, .. } => *dim,
            ActionSpec::Discrete { n } => *n,
        }
    }

    pub fn check(&self, action: &Action) -> Result<(), EnvError> {
        match (self, action) {
            (ActionSpec::Continuous { dim, .. }, Action::Continuous(a)) if a.len() == *dim => {
                if a.iter().all(|x| x.is_finite()) {
                    Ok(())
                } else {
                    Err(EnvError::BadAction("non-finite component".into()))
                }
            }
            (ActionSpec::Discrete { n }, Action::Discrete(i)) if i < n => Ok(()),
            _ => Err(EnvError::BadAction(format!("{action:?} vs {self:?}"))),
        }
    }

    /// The action that leaves the world unchanged where one exists (zero vector).
    pub fn zero(&self) -> Action {
        match self {
            ActionSpec::Continuous { dim, .. } => Action::Continuous(vec![0.0; *dim]),
            ActionSpec::Discrete { .. } => Action::Discrete(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

impl Action {
    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(v) => Some(v),
            Action::Discrete(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action: ActionSpec,
    pub horizon: usize,
    pub discount: f64,
}

/// Result of one environment step.
///
/// `reward` is the reward of whoever drives this environment: the victim's own reward for
/// the base tasks, the adversary's extrinsic reward for the threat-model wrappers.
/// `victim_reward` is always the victim's task reward so evaluations can report it.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub victim_reward: f64,
    /// The task reached a terminal state (victim success).
    pub terminal: bool,
    /// The horizon ran out without a terminal state.
    pub truncated: bool,
    pub success: bool,
}

/// One recorded adversary transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    /// The adversary's extrinsic reward, i.e. the negated victim success indicator.
    pub ext_reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
    pub log_prob: f64,
    pub victim_succeeded: bool,
}

/// A single-agent episodic decision process.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the start state is a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;

    /// The centre of the initial-state distribution.
    fn nominal_start(&self) -> Vec<f64>;
}

/// Static description of a two-player game.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub name: String,
    pub state_dim: usize,
    pub victim_action: ActionSpec,
    pub adversary_action: ActionSpec,
    pub projection: StateProjection,
    pub horizon: usize,
    pub discount: f64,
}

/// A two-player zero-sum episodic game; the victim's success is the adversary's loss.
pub trait MarkovGame: Send {
    fn spec(&self) -> &GameSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step_joint(&mut self, victim: &Action, adversary: &Action) -> Result<StepOutcome, EnvError>;
    fn nominal_start(&self) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    SingleAgent,
    TwoPlayer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: EnvKind,
    pub summary: &'static str,
}

const CATALOG: [CatalogEntry; 3] = [
    CatalogEntry {
        name: "grid-chain",
        kind: EnvKind::SingleAgent,
        summary: "tabular chain of n states, actions left/right with slip; exact oracle",
    },
    CatalogEntry {
        name: "point-goal",
        kind: EnvKind::SingleAgent,
        summary: "2-D point navigation through a wall gap to a goal box; sparse or dense reward",
    },
    CatalogEntry {
        name: "gate-run",
        kind: EnvKind::TwoPlayer,
        summary: "runner must cross x >= 1; a blocker within 0.15 freezes it for the step",
    },
];

/// The built-in environments, by name.
pub fn built_in_environments() -> &'static [CatalogEntry] {
    &CATALOG
}

pub fn lookup(name: &str) -> Result<&'static CatalogEntry, EnvError> {
    CATALOG
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| EnvError::UnknownEnvironment(name.to_string()))
}

/// Knobs shared by the catalog constructors. Unset fields fall back to each task's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardKind>,
    /// Number of states (grid-chain only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
}

pub fn make_single_agent(name: &str, opts: &EnvOptions) -> Result<Box<dyn Environment>, EnvError> {
    let entry = lookup(name)?;
    match entry.name {
        "grid-chain" => {
            let mut p = GridChainParams::default();
            if let Some(n) = opts.states {
                p.states = n;
            }
            if let Some(h) = opts.horizon {
                p.horizon = h;
            }
            if let Some(g) = opts.discount {
                p.discount = g;
            }
            Ok(Box::new(GridChain::new(p)?))
        }
        "point-goal" => {
            let mut p = PointGoalParams::default();
            if let Some(h) = opts.horizon {
                p.horizon = h;
            }
            if let Some(g) = opts.discount {
                p.discount = g;
            }
            if let Some(r) = opts.reward {
                p.reward = r;
            }
            Ok(Box::new(PointGoal::new(p)?))
        }
        other => Err(EnvError::WrongKind(other.to_string(), "a two-player game")),
    }
}

pub fn make_game(name: &str, opts: &EnvOptions) -> Result<Box<dyn MarkovGame>, EnvError> {
    let entry = lookup(name)?;
    match entry.name {
        "gate-run" => {
            let mut p = GateRunParams::default();
            if let Some(h) = opts.horizon {
                p.horizon = h;
            }
            if let Some(g) = opts.discount {
                p.discount = g;
            }
            Ok(Box::new(GateRun::new(p)?))
        }
        other => Err(EnvError::WrongKind(other.to_string(), "a single-agent task")),
    }
}

pub(crate) fn validate_horizon_discount(horizon: usize, discount: f64) -> Result<(), EnvError> {
    if horizon == 0 {
        return Err(EnvError::InvalidParameter("horizon must be positive".into()));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(EnvError::InvalidParameter(format!("discount {discount} outside [0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_lists_exactly_three_tasks() {
        let names: Vec<_> = built_in_environments().iter().map(|e| e.name).collect();
        assert_eq!(names, ["grid-chain", "point-goal", "gate-run"]);
    }

    #[test]
    fn unknown_name_is_an_error() {
        let err = make_single_agent("mujoco-ant", &EnvOptions::default()).err().unwrap();
        assert_eq!(err, EnvError::UnknownEnvironment("mujoco-ant".into()));
        assert!(make_game("point-goal", &EnvOptions::default()).is_err());
    }

    #[test]
    fn point_goal_default_horizon_is_100() {
        let env = make_single_agent("point-goal", &EnvOptions::default()).unwrap();
        assert_eq!(env.spec().horizon, 100);
    }

    #[test]
    fn action_spec_checks_shape() {
        let spec = ActionSpec::continuous_box(2, 1.0);
        assert!(spec.check(&Action::Continuous(vec![0.0, 3.0])).is_ok());
        assert!(spec.check(&Action::Continuous(vec![0.0])).is_err());
        assert!(spec.check(&Action::Continuous(vec![f64::NAN, 0.0])).is_err());
        assert!(ActionSpec::Discrete { n: 2 }.check(&Action::Discrete(2)).is_err());
    }
}
