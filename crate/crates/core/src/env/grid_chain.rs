use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::{validate_horizon_discount, Action, ActionSpec, EnvError, EnvSpec, Environment, StepOutcome};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct GridChainParams {
    pub states: usize,
    /// Probability that the chosen move goes the opposite way.
    pub slip: f64,
    pub horizon: usize,
    pub discount: f64,
}

impl Default for GridChainParams {
    fn default() -> Self {
        Self { states: 5, slip: 0.1, horizon: 50, discount: 0.9 }
    }
}

/// `n` states on a line, start at index 0, action 0 = left, 1 = right.
///
/// The chain never terminates; occupying the right end counts as success and pays 1.
/// The state vector is the single coordinate `[index]`.
pub struct GridChain {
    params: GridChainParams,
    spec: EnvSpec,
    pos: usize,
    t: usize,
    done: bool,
    rng: Rng,
}

impl GridChain {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;

    pub fn new(params: GridChainParams) -> Result<Self, EnvError> {
        validate_horizon_discount(params.horizon, params.discount)?;
        if params.states < 2 {
            return Err(EnvError::InvalidParameter("grid-chain needs at least 2 states".into()));
        }
        if !(0.0..=1.0).contains(&params.slip) {
            return Err(EnvError::InvalidParameter(format!("slip {} outside [0, 1]", params.slip)));
        }
        let spec = EnvSpec {
            name: "grid-chain".into(),
            state_dim: 1,
            action: ActionSpec::Discrete { n: 2 },
            horizon: params.horizon,
            discount: params.discount,
        };
        Ok(Self { params, spec, pos: 0, t: 0, done: true, rng: rng::stream(0, 0) })
    }

    pub fn num_states(&self) -> usize {
        self.params.states
    }

    fn shift(&self, pos: usize, right: bool) -> usize {
        if right {
            (pos + 1).min(self.params.states - 1)
        } else {
            pos.saturating_sub(1)
        }
    }

    /// Row-stochastic transition matrix under `policy`, where `policy[s] = [p_left, p_right]`.
    pub fn transition_matrix(&self, policy: &[[f64; 2]]) -> DMatrix<f64> {
        let n = self.params.states;
        assert_eq!(policy.len(), n, "one action distribution per state");
        let slip = self.params.slip;
        let mut p = DMatrix::zeros(n, n);
        for (s, pi) in policy.iter().enumerate() {
            // moving right happens if we pick right and don't slip, or pick left and slip
            let p_right = pi[1] * (1.0 - slip) + pi[0] * slip;
            p[(s, self.shift(s, true))] += p_right;
            p[(s, self.shift(s, false))] += 1.0 - p_right;
        }
        p
    }

    /// Normalised discounted state-visitation distribution
    /// `d(s) = (1 - γ) Σ_t γ^t P(s_t = s)` from the fixed start state, by linear solve.
    pub fn discounted_state_distribution(&self, policy: &[[f64; 2]], gamma: f64) -> Vec<f64> {
        let n = self.params.states;
        let p = self.transition_matrix(policy);
        // dᵀ (I - γP) = (1-γ) μᵀ  ⇔  (I - γP)ᵀ d = (1-γ) μ
        let a = (DMatrix::identity(n, n) - p * gamma).transpose();
        let mut mu = DVector::zeros(n);
        mu[0] = 1.0 - gamma;
        let d = a.lu().solve(&mu).expect("I - γP is invertible for γ < 1");
        d.iter().copied().collect()
    }
}

impl Environment for GridChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng::stream(seed, 0);
        self.pos = 0;
        self.t = 0;
        self.done = false;
        vec![0.0]
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.spec.action.check(action)?;
        let Action::Discrete(a) = action else { unreachable!() };
        let slipped = self.rng.random::<f64>() < self.params.slip;
        let right = (*a == Self::RIGHT) != slipped;
        self.pos = self.shift(self.pos, right);
        self.t += 1;
        let success = self.pos == self.params.states - 1;
        let truncated = self.t >= self.params.horizon;
        self.done = truncated;
        let reward = if success { 1.0 } else { 0.0 };
        Ok(StepOutcome {
            state: vec![self.pos as f64],
            reward,
            victim_reward: reward,
            terminal: false,
            truncated,
            success,
        })
    }

    fn nominal_start(&self) -> Vec<f64> {
        vec![0.0]
    }
}
