//! Black-box adversarial-policy learning against frozen reinforcement-learning victims.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: decision processes, the built-in toy tasks, frozen victims and the two
//!   threat-model wrappers (observation perturbation, fixed-victim opponent).
//! - [`nn`]: a small tanh MLP with Gaussian/categorical heads and two value heads,
//!   with hand-written reverse-mode gradients.
//! - [`ppo`]: GAE over two reward streams and the clipped-surrogate update.
//! - [`density`]: the union replay buffer with exact KNN queries.
//! - [`regularizers`]: SC / PC / R / D intrinsic bonuses and the mimic policy.
//! - [`bias`]: the Lagrangian temperature controller.
//! - [`harness`]: the attack loop, victim training, evaluation and baselines.
//! - [`config`] and [`io`]: experiment configuration and run-directory outputs.

pub mod bias;
pub mod config;
pub mod density;
pub mod env;
pub mod harness;
pub mod io;
pub mod nn;
pub mod ppo;
pub mod regularizers;
pub mod rng;
pub mod stats;

pub use bias::BrController;
pub use config::ExperimentConfig;
pub use density::{CoverBuffer, DensityEstimate, Query};
pub use env::{Action, ActionSpec, EnvSpec, Environment, MarkovGame, StepOutcome, Transition, VictimPolicy};
pub use harness::{AttackReport, Evaluation};
pub use io::MetricsRow;
pub use nn::{ActionDistribution, HeadKind, PolicyHandle};
pub use ppo::{PpoConfig, RolloutBatch};
pub use regularizers::{RegularizerKind, RegularizerSpec};
