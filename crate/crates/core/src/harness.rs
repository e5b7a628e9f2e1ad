//! The attack loop, victim training, evaluation and the random-adversary baseline.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{BrController, BrError};
use crate::config::{ConfigError, ExperimentConfig};
use crate::density::{self, DensityError};
use crate::env::{
    self, Action, ActionSpec, AdversaryReward, EnvError, EnvKind, Environment, FixedVictimMdp, PerturbationMdp,
    StateProjection, Transition, VictimPolicy,
};
use crate::nn::{Architecture, NnError, PolicyHandle, PolicyInit};
use crate::ppo::{self, PpoConfig, PpoError, RolloutBatch};
use crate::regularizers::{IntrinsicState, RegularizerError, RegularizerKind};
use crate::rng::{self, Rng};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Regularizer(#[from] RegularizerError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Br(#[from] BrError),
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("adversary expects {expected} inputs and {head} action outputs, environment has {state} and {action}")]
    SpecMismatch { expected: usize, head: usize, state: usize, action: usize },
    #[error("victim parameters changed during the run")]
    VictimModified,
    #[error("victim training needs a single-agent environment, `{0}` is a two-player game")]
    NotSingleAgent(String),
}

/// One row of the per-iteration metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Cumulative transitions collected so far.
    pub samples: u64,
    /// Mean extrinsic return of episodes completed in this iteration's batch.
    pub mean_ext_return: f64,
    pub mean_int_return: f64,
    pub asr_eval: Option<f64>,
    /// Temperature and multiplier after this iteration's update.
    pub tau: f64,
    pub lagrange_multiplier: f64,
    /// KNN entropy estimate of the union buffer; NaN while the buffer is too small.
    pub entropy_proxy: f64,
    pub wall_seconds: Option<f64>,
}

/// Victim performance over a seeded set of evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: usize,
    /// Mean per-episode victim task reward.
    pub victim_mean_reward: f64,
    pub victim_reward_std: f64,
    pub victim_success_rate: f64,
    /// Mean per-episode adversary return under the negated success indicator.
    pub mean_adversary_return: f64,
    /// Fraction of episodes in which the victim failed.
    pub asr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub env: String,
    pub regularizer: RegularizerKind,
    pub bias_reduction: bool,
    pub seed: u64,
    pub total_samples: u64,
    pub iterations: Vec<IterationRecord>,
    pub evaluation: Option<Evaluation>,
    pub victim_checksum: String,
    pub error: Option<String>,
}

/// A finished attack: the report and the trained adversary.
#[derive(Clone, Debug)]
pub struct AttackRun {
    pub report: AttackReport,
    pub adversary: PolicyHandle,
}

/// A failed attack with whatever was produced before the failure.
#[derive(Clone, Debug)]
pub struct AttackFailure {
    pub error: HarnessError,
    pub report: AttackReport,
    /// Present when the failure happened after the adversary was initialised.
    pub adversary: Option<PolicyHandle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VictimReport {
    pub env: String,
    pub seed: u64,
    pub total_samples: u64,
    pub iterations: Vec<IterationRecord>,
    pub evaluation: Evaluation,
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct VictimRun {
    pub report: VictimReport,
    pub policy: PolicyHandle,
}

/// Steps one environment with a stochastic policy, carrying unfinished episodes over
/// between calls.
pub struct Collector {
    env: Box<dyn Environment>,
    seed: u64,
    rng: Rng,
    episodes: u64,
    current: Option<Vec<f64>>,
    ep_return: f64,
}

impl Collector {
    /// Collector `index` draws from its own action stream and episode-seed sequence.
    pub fn new(env: Box<dyn Environment>, seed: u64, index: u64) -> Self {
        let id = rng::STREAM_COLLECTOR_BASE + index;
        Self { env, seed: rng::mix(seed, id), rng: rng::stream(seed, id), episodes: 0, current: None, ep_return: 0.0 }
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn collect(&mut self, policy: &PolicyHandle, steps: usize) -> Result<RolloutBatch, HarnessError> {
        let mut batch = RolloutBatch::default();
        for _ in 0..steps {
            let state = match self.current.take() {
                Some(s) => s,
                None => {
                    self.ep_return = 0.0;
                    self.episodes += 1;
                    self.env.reset(rng::mix(self.seed, self.episodes - 1))
                }
            };
            let dist = policy.forward(&state)?.dist;
            let action = dist.sample(&mut self.rng);
            let log_prob = dist.log_prob(&action);
            let out = self.env.step(&action)?;
            self.ep_return += out.reward;
            let done = out.terminal || out.truncated;
            if !done {
                self.current = Some(out.state.clone());
            }
            batch.transitions.push(Transition {
                state,
                action,
                ext_reward: out.reward,
                next_state: out.state,
                terminal: out.terminal,
                truncated: out.truncated,
                log_prob,
                victim_succeeded: out.success,
            });
            if done {
                batch.boundaries.push(batch.transitions.len());
                batch.episode_returns.push(self.ep_return);
            }
        }
        if batch.boundaries.last() != Some(&batch.len()) && !batch.is_empty() {
            batch.boundaries.push(batch.len());
        }
        Ok(batch)
    }
}

/// How the adversary picks actions during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Adversary<'a> {
    Policy { policy: &'a PolicyHandle, deterministic: bool },
    /// Uniform over the adversary's action box.
    Uniform,
    /// Always the zero action, i.e. no attack in the perturbation threat model.
    Zero,
}

fn uniform_action(spec: &ActionSpec, rng: &mut Rng) -> Action {
    match spec {
        ActionSpec::Continuous { low, high, .. } => {
            Action::Continuous(low.iter().zip(high).map(|(&l, &h)| rng.random_range(l..=h)).collect())
        }
        ActionSpec::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
    }
}

/// Runs `episodes` seeded episodes of an attack environment.
///
/// The adversary's return is measured with the negated success indicator whatever reward
/// it was trained on, so `asr == mean_adversary_return + 1` holds exactly.
pub fn evaluate_in(
    env: &mut dyn Environment,
    adversary: Adversary<'_>,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::NoEpisodes);
    }
    let spec = env.spec().clone();
    if let Adversary::Policy { policy, .. } = adversary {
        let a = policy.arch();
        if a.input_dim != spec.state_dim || a.output_dim != spec.action.head_width() {
            return Err(HarnessError::SpecMismatch {
                expected: a.input_dim,
                head: a.output_dim,
                state: spec.state_dim,
                action: spec.action.head_width(),
            });
        }
    }
    let mut rng = rng::stream(seed, rng::STREAM_EVAL);
    let episode_seed = rng::mix(seed, rng::STREAM_EVAL);
    let mut victim_rewards = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for ep in 0..episodes {
        let mut s = env.reset(rng::mix(episode_seed, ep as u64));
        let mut victim_reward = 0.0;
        let mut success = false;
        loop {
            let action = match adversary {
                Adversary::Policy { policy, deterministic } => {
                    let dist = policy.forward(&s)?.dist;
                    if deterministic {
                        dist.mode()
                    } else {
                        dist.sample(&mut rng)
                    }
                }
                Adversary::Uniform => uniform_action(&spec.action, &mut rng),
                Adversary::Zero => spec.action.zero(),
            };
            let out = env.step(&action)?;
            victim_reward += out.victim_reward;
            success |= out.success;
            if out.terminal || out.truncated {
                break;
            }
            s = out.state;
        }
        successes += usize::from(success);
        victim_rewards.push(victim_reward);
    }
    let n = episodes as f64;
    let (victim_mean_reward, victim_reward_std) = stats::mean_std(&victim_rewards);
    let mean_adversary_return = -(successes as f64) / n;
    Ok(Evaluation {
        episodes,
        victim_mean_reward,
        victim_reward_std,
        victim_success_rate: successes as f64 / n,
        mean_adversary_return,
        asr: mean_adversary_return + 1.0,
    })
}

/// The attack environment for `config` with `victim` frozen inside it, plus the
/// victim/adversary coordinate split for two-player games.
pub fn attack_env(
    config: &ExperimentConfig,
    victim: VictimPolicy,
) -> Result<(Box<dyn Environment>, Option<StateProjection>), HarnessError> {
    let opts = config.env.options();
    match config.env_kind()? {
        EnvKind::SingleAgent => {
            let inner = env::make_single_agent(&config.env.name, &opts)?;
            let mdp = PerturbationMdp::new(inner, victim, config.env.epsilon, config.env.adversary_reward)?;
            Ok((Box::new(mdp), None))
        }
        EnvKind::TwoPlayer => {
            let game = env::make_game(&config.env.name, &opts)?;
            let projection = game.spec().projection.clone();
            let mdp = FixedVictimMdp::new(game, victim, AdversaryReward::SparseIndicator)?;
            Ok((Box::new(mdp), Some(projection)))
        }
    }
}

/// Evaluates a trained adversary against `victim` under `config`'s threat model.
pub fn evaluate(
    config: &ExperimentConfig,
    victim: VictimPolicy,
    adversary: &PolicyHandle,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    let (mut env, _) = attack_env(config, victim)?;
    let adversary = Adversary::Policy { policy: adversary, deterministic: config.eval.deterministic_adversary };
    evaluate_in(env.as_mut(), adversary, episodes, seed)
}

/// Uniformly random adversary: perturbations from the ε-ball, or uniform opponent moves.
pub fn random_attack_baseline(
    config: &ExperimentConfig,
    victim: VictimPolicy,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    let (mut env, _) = attack_env(config, victim)?;
    evaluate_in(env.as_mut(), Adversary::Uniform, episodes, seed)
}

fn new_policy(config: &ExperimentConfig, state_dim: usize, action: &ActionSpec, stream: u64) -> PolicyHandle {
    let arch = Architecture::for_action_space(state_dim, action, config.network.hidden);
    let init = PolicyInit { log_std: config.network.init_log_std, ..PolicyInit::default() };
    PolicyHandle::new(arch, &init, &mut rng::stream(config.seed, stream))
}

/// PPO on the unattacked task. The policy is saved by the caller even when no episode
/// succeeded; the report then carries a warning.
pub fn train_victim(config: &ExperimentConfig) -> Result<VictimRun, HarnessError> {
    if config.env_kind()? != EnvKind::SingleAgent {
        return Err(HarnessError::NotSingleAgent(config.env.name.clone()));
    }
    let started = Instant::now();
    let opts = config.env.options();
    let env = env::make_single_agent(&config.env.name, &opts)?;
    let spec = env.spec().clone();
    let ppo_cfg: &PpoConfig = &config.victim_ppo;
    let mut policy = new_policy(config, spec.state_dim, &spec.action, rng::STREAM_VICTIM_INIT);
    let mut adam = ppo_cfg.optimizer(policy.arch().num_params());
    let mut minibatch_rng = rng::stream(config.seed, rng::STREAM_MINIBATCH);
    let mut collector = Collector::new(env, config.seed, 0);
    let mut iterations = Vec::new();
    let mut samples = 0u64;
    let mut any_success = false;
    while samples < config.budget.victim_steps {
        let mut batch = collector.collect(&policy, ppo_cfg.batch_size)?;
        samples += batch.len() as u64;
        any_success |= batch.transitions.iter().any(|t| t.victim_succeeded);
        batch.compute_advantages(&policy, ppo_cfg)?;
        ppo::ppo_update(&mut policy, &mut adam, &batch, 1.0, ppo_cfg, &mut minibatch_rng)?;
        iterations.push(IterationRecord {
            iteration: iterations.len() as u64 + 1,
            samples,
            mean_ext_return: batch.mean_episode_return(),
            mean_int_return: 0.0,
            asr_eval: None,
            tau: 1.0,
            lagrange_multiplier: 0.0,
            entropy_proxy: f64::NAN,
            wall_seconds: config.output.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        });
    }
    let victim = VictimPolicy::Learned(policy.clone());
    let inner = env::make_single_agent(&config.env.name, &opts)?;
    let mut unattacked = PerturbationMdp::new(inner, victim, 0.0, AdversaryReward::SparseIndicator)?;
    let evaluation = evaluate_in(&mut unattacked, Adversary::Zero, config.budget.victim_eval_episodes, config.seed)?;
    let warning = (!any_success && samples > 0)
        .then(|| format!("no successful episode in {samples} training steps; checkpoint saved anyway"));
    Ok(VictimRun {
        report: VictimReport {
            env: config.env.name.clone(),
            seed: config.seed,
            total_samples: samples,
            iterations,
            evaluation,
            warning,
        },
        policy,
    })
}

/// Runs the attack described by `config` against its configured victim.
///
/// Each iteration collects one batch with the current adversary, adds it to the union
/// buffer, computes intrinsic bonuses, estimates both advantage streams, takes a PPO step
/// on `Â_E + τ Â_I` and then updates `(λ, τ)` from the batch's extrinsic return.
pub fn run_attack(config: &ExperimentConfig) -> Result<AttackRun, Box<AttackFailure>> {
    let fail = |error: HarnessError, checksum: u64| {
        Box::new(AttackFailure { error, report: empty_report(config, checksum), adversary: None })
    };
    let victim = config.load_victim().map_err(|e| fail(e.into(), 0))?;
    let checksum = victim.checksum();
    let (env, projection) = attack_env(config, victim.clone()).map_err(|e| fail(e, checksum))?;
    let spec = env.spec().clone();
    let adversary = new_policy(config, spec.state_dim, &spec.action, rng::STREAM_ADVERSARY_INIT);
    let mut run = AttackRun { report: empty_report(config, checksum), adversary };
    match attack_loop(config, env, projection, &victim, &mut run) {
        Ok(()) => Ok(run),
        Err(error) => {
            run.report.error = Some(error.to_string());
            Err(Box::new(AttackFailure { error, report: run.report, adversary: Some(run.adversary) }))
        }
    }
}

fn empty_report(config: &ExperimentConfig, checksum: u64) -> AttackReport {
    AttackReport {
        env: config.env.name.clone(),
        regularizer: config.regularizer.kind,
        bias_reduction: config.br.enabled,
        seed: config.seed,
        total_samples: 0,
        iterations: Vec::new(),
        evaluation: None,
        victim_checksum: format!("{checksum:016x}"),
        error: None,
    }
}

fn attack_loop(
    config: &ExperimentConfig,
    env: Box<dyn Environment>,
    projection: Option<StateProjection>,
    victim: &VictimPolicy,
    run: &mut AttackRun,
) -> Result<(), HarnessError> {
    let started = Instant::now();
    let checksum = victim.checksum();
    let ppo_cfg = &config.ppo;
    let spec = env.spec().clone();
    let nominal = env.nominal_start();
    let mut intrinsic = IntrinsicState::new(
        config.regularizer.clone(),
        spec.state_dim,
        projection,
        &nominal,
        &run.adversary,
        rng::mix(config.seed, rng::STREAM_BUFFER),
    )?;
    let mut br = if config.br.enabled { BrController::new(config.br.eta) } else { BrController::constant(config.br.tau) };
    let mut adam = ppo_cfg.optimizer(run.adversary.arch().num_params());
    let mut minibatch_rng = rng::stream(config.seed, rng::STREAM_MINIBATCH);
    let mut entropy_rng = rng::stream(config.seed, rng::STREAM_ENTROPY_SAMPLE);
    let mut collector = Collector::new(env, config.seed, 0);
    let mut samples = 0u64;
    let mut iteration = 0u64;
    while samples < config.budget.attack_steps {
        iteration += 1;
        let mut batch = collector.collect(&run.adversary, ppo_cfg.batch_size)?;
        samples += batch.len() as u64;
        let states: Vec<Vec<f64>> = batch.transitions.iter().map(|t| t.state.clone()).collect();
        let slots = intrinsic.observe(&states, iteration);
        batch.intrinsic = intrinsic.bonuses(&states, &slots, &run.adversary, iteration)?;
        batch.compute_advantages(&run.adversary, ppo_cfg)?;
        let tau = br.temperature();
        ppo::ppo_update(&mut run.adversary, &mut adam, &batch, tau, ppo_cfg, &mut minibatch_rng)?;
        if br.enabled() && !batch.episode_returns.is_empty() {
            br.update(batch.mean_episode_return())?;
        }
        let entropy_proxy = union_entropy(&intrinsic, config, &mut entropy_rng);
        run.report.total_samples = samples;
        run.report.iterations.push(IterationRecord {
            iteration,
            samples,
            mean_ext_return: batch.mean_episode_return(),
            mean_int_return: batch.mean_intrinsic_return(),
            asr_eval: None,
            tau: br.temperature(),
            lagrange_multiplier: br.lambda(),
            entropy_proxy,
            wall_seconds: config.output.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        });
    }
    let evaluation = evaluate(config, victim.clone(), &run.adversary, config.budget.eval_episodes, config.seed)?;
    if let Some(last) = run.report.iterations.last_mut() {
        last.asr_eval = Some(evaluation.asr);
    }
    run.report.evaluation = Some(evaluation);
    if victim.checksum() != checksum {
        return Err(HarnessError::VictimModified);
    }
    Ok(())
}

fn union_entropy(intrinsic: &IntrinsicState, config: &ExperimentConfig, rng: &mut Rng) -> f64 {
    let cover = intrinsic.cover();
    let spec = intrinsic.spec();
    let metric = cover.metric();
    density::entropy_estimate_sampled(cover, spec.k, spec.c0, &metric, config.output.entropy_sample, rng)
        .unwrap_or(f64::NAN)
}
