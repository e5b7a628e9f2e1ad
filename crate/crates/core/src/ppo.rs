//! GAE over an extrinsic and an optional intrinsic reward stream, and the clipped-surrogate
//! update on the combined advantage `Â_E + τ Â_I`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Transition;
use crate::nn::loss::{self, LossSpec, PpoCoefficients, PpoSample};
use crate::nn::{Adam, NnError, PolicyHandle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, minibatch {minibatch}; parameters restored to the pre-update snapshot")]
    NonFiniteLoss { epoch: usize, minibatch: usize },
    #[error("batch advantages have not been computed")]
    MissingAdvantages,
    #[error("temperature {0} outside [0, 1]")]
    BadTemperature(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    /// Environment steps collected per iteration.
    pub batch_size: usize,
    pub max_grad_norm: f64,
    /// Bootstrap the value at horizon expiry. Off by default: in the built-in tasks running
    /// out of time is a decided outcome, not an interruption.
    pub bootstrap_on_horizon: bool,
    /// Bootstrap the intrinsic value through terminal states, so that ending an episode
    /// early does not dodge the (typically negative) bonuses of the states that follow.
    pub intrinsic_through_terminal: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch_size: 64,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            normalize_advantages: true,
            batch_size: 2048,
            max_grad_norm: 0.5,
            bootstrap_on_horizon: false,
            intrinsic_through_terminal: true,
        }
    }
}

impl PpoConfig {
    /// Checks every bound; the error is `(key, reason)` with `key` relative to this section.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let bad = |k: &'static str, m: String| Err((k, m));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio", format!("{} outside (0, 1)", self.clip_ratio));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", format!("{} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", format!("{} outside [0, 1]", self.gae_lambda));
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} must be positive", self.learning_rate));
        }
        if !(self.value_coef >= 0.0 && self.value_coef.is_finite()) {
            return bad("value_coef", format!("{} must be non-negative", self.value_coef));
        }
        if !self.entropy_coef.is_finite() {
            return bad("entropy_coef", "must be finite".into());
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm", format!("{} must be positive", self.max_grad_norm));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> PpoCoefficients {
        PpoCoefficients { clip_ratio: self.clip_ratio, value_coef: self.value_coef, entropy_coef: self.entropy_coef }
    }

    pub fn optimizer(&self, num_params: usize) -> Adam {
        let mut adam = Adam::new(num_params, self.learning_rate);
        adam.max_grad_norm = Some(self.max_grad_norm);
        adam
    }
}

/// Generalised advantage estimates, episode by episode.
///
/// `boundaries` holds the exclusive end index of each episode segment (the last equals
/// `rewards.len()`), and `values` holds each segment's state values followed by one
/// bootstrap value, so `values.len() == rewards.len() + boundaries.len()`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    boundaries: &[usize],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, PpoError> {
    if values.len() != rewards.len() + boundaries.len() {
        return Err(PpoError::LengthMismatch { expected: rewards.len() + boundaries.len(), got: values.len() });
    }
    if boundaries.last().copied().unwrap_or(0) != rewards.len() || boundaries.windows(2).any(|w| w[0] > w[1]) {
        return Err(PpoError::LengthMismatch { expected: rewards.len(), got: boundaries.last().copied().unwrap_or(0) });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut start = 0;
    for (ep, &end) in boundaries.iter().enumerate() {
        let v = &values[start + ep..end + ep + 1];
        let mut acc = 0.0;
        for t in (start..end).rev() {
            let i = t - start;
            let delta = rewards[t] + gamma * v[i + 1] - v[i];
            acc = delta + gamma * lambda * acc;
            adv[t] = acc;
        }
        start = end;
    }
    Ok(adv)
}

/// Shifts and scales `xs` to zero mean and unit (population) standard deviation.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let (mean, std) = crate::stats::mean_std(xs);
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// On-policy transitions of one iteration plus everything derived from them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    /// Exclusive end index of each episode segment in `transitions`.
    pub boundaries: Vec<usize>,
    /// Per-step intrinsic bonus; `None` when no regulariser is active.
    pub intrinsic: Option<Vec<f64>>,
    pub adv_ext: Vec<f64>,
    pub ret_ext: Vec<f64>,
    pub adv_int: Option<Vec<f64>>,
    pub ret_int: Option<Vec<f64>>,
    /// Adversary extrinsic return of each episode that finished inside this batch.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Mean return of completed episodes; 0 when none completed.
    pub fn mean_episode_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            0.0
        } else {
            self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
        }
    }

    /// Mean per-episode intrinsic return over the batch's episode segments.
    pub fn mean_intrinsic_return(&self) -> f64 {
        match &self.intrinsic {
            Some(b) if !self.boundaries.is_empty() => b.iter().sum::<f64>() / self.boundaries.len() as f64,
            _ => 0.0,
        }
    }

    /// Fills advantages and return targets for both streams with GAE under `policy`'s
    /// value heads.
    pub fn compute_advantages(&mut self, policy: &PolicyHandle, config: &PpoConfig) -> Result<(), PpoError> {
        if let Some(b) = &self.intrinsic {
            if b.len() != self.len() {
                return Err(PpoError::LengthMismatch { expected: self.len(), got: b.len() });
            }
        }
        let mut v_ext = Vec::with_capacity(self.len() + self.boundaries.len());
        let mut v_int = Vec::with_capacity(v_ext.capacity());
        let mut start = 0;
        for &end in &self.boundaries {
            for t in &self.transitions[start..end] {
                let f = policy.forward(&t.state)?;
                v_ext.push(f.v_ext);
                v_int.push(f.v_int);
            }
            let last = &self.transitions[end - 1];
            let bootstrap = !last.terminal && (!last.truncated || config.bootstrap_on_horizon);
            let bootstrap_int = bootstrap || (last.terminal && config.intrinsic_through_terminal);
            if bootstrap || bootstrap_int {
                let f = policy.forward(&last.next_state)?;
                v_ext.push(if bootstrap { f.v_ext } else { 0.0 });
                v_int.push(if bootstrap_int { f.v_int } else { 0.0 });
            } else {
                v_ext.push(0.0);
                v_int.push(0.0);
            }
            start = end;
        }
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.ext_reward).collect();
        self.adv_ext = compute_gae(&rewards, &v_ext, &self.boundaries, config.gamma, config.gae_lambda)?;
        self.ret_ext = targets(&self.adv_ext, &v_ext, &self.boundaries);
        match &self.intrinsic {
            Some(bonus) => {
                let adv = compute_gae(bonus, &v_int, &self.boundaries, config.gamma, config.gae_lambda)?;
                self.ret_int = Some(targets(&adv, &v_int, &self.boundaries));
                self.adv_int = Some(adv);
            }
            None => {
                self.adv_int = None;
                self.ret_int = None;
            }
        }
        Ok(())
    }

    /// `Â_E + τ Â_I` after optional per-stream normalisation.
    pub fn combined_advantages(&self, tau: f64, normalize_streams: bool) -> Vec<f64> {
        let mut ext = self.adv_ext.clone();
        if normalize_streams {
            normalize(&mut ext);
        }
        if let Some(int) = &self.adv_int {
            let mut int = int.clone();
            if normalize_streams {
                normalize(&mut int);
            }
            for (e, i) in ext.iter_mut().zip(int) {
                *e += tau * i;
            }
        }
        ext
    }
}

/// Return targets `Â + V` with the bootstrap entries skipped.
fn targets(adv: &[f64], values: &[f64], boundaries: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(adv.len());
    let mut start = 0;
    for (ep, &end) in boundaries.iter().enumerate() {
        for t in start..end {
            out.push(adv[t] + values[t + ep]);
        }
        start = end;
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// Runs `config.epochs` passes of shuffled minibatch Adam steps on the combined objective.
///
/// On a non-finite loss the parameters are restored to their values on entry.
pub fn ppo_update(
    policy: &mut PolicyHandle,
    adam: &mut Adam,
    batch: &RolloutBatch,
    tau: f64,
    config: &PpoConfig,
    rng: &mut impl rand::Rng,
) -> Result<UpdateStats, PpoError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(PpoError::BadTemperature(tau));
    }
    let n = batch.len();
    if batch.adv_ext.len() != n || batch.ret_ext.len() != n {
        return Err(PpoError::MissingAdvantages);
    }
    let advantages = batch.combined_advantages(tau, config.normalize_advantages);
    let snapshot = policy.snapshot();
    let coef = config.coefficients();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for (mb, chunk) in order.chunks(config.minibatch_size).enumerate() {
            let samples: Vec<PpoSample<'_>> = chunk
                .iter()
                .map(|&i| {
                    let t = &batch.transitions[i];
                    PpoSample {
                        state: &t.state,
                        action: &t.action,
                        old_log_prob: t.log_prob,
                        advantage: advantages[i],
                        ext_return: batch.ret_ext[i],
                        int_return: batch.ret_int.as_ref().map(|r| r[i]),
                    }
                })
                .collect();
            let out = loss::loss_and_grad(policy, &LossSpec::Ppo { samples: &samples, coef })?;
            if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                policy.restore(&snapshot);
                return Err(PpoError::NonFiniteLoss { epoch, minibatch: mb });
            }
            adam.step(policy, &out.grad);
            stats.surrogate += out.surrogate;
            stats.loss += out.loss;
            stats.clip_fraction += out.clip_fraction;
            stats.approx_kl += out.approx_kl;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches.max(1) as f64;
    stats.surrogate /= m;
    stats.loss /= m;
    stats.clip_fraction /= m;
    stats.approx_kl /= m;
    Ok(stats)
}
