use serde::{Deserialize, Serialize};

use super::{Action, ActionSpec, EnvError, EnvSpec, Environment, MarkovGame, StepOutcome, VictimPolicy};

/// Which coordinates of a joint state belong to the victim and which to the adversary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateProjection {
    dim: usize,
    victim: Vec<usize>,
    adversary: Vec<usize>,
}

impl StateProjection {
    /// Fails unless `victim` and `adversary` together list every coordinate exactly once.
    pub fn new(dim: usize, victim: Vec<usize>, adversary: Vec<usize>) -> Result<Self, EnvError> {
        let mut seen = vec![false; dim];
        for &i in victim.iter().chain(&adversary) {
            if i >= dim || std::mem::replace(&mut seen[i], true) {
                return Err(EnvError::InvalidParameter(format!("projection does not partition {dim} coordinates")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(EnvError::InvalidParameter(format!("projection does not partition {dim} coordinates")));
        }
        Ok(Self { dim, victim, adversary })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn victim_dim(&self) -> usize {
        self.victim.len()
    }

    pub fn adversary_dim(&self) -> usize {
        self.adversary.len()
    }

    pub fn victim_indices(&self) -> &[usize] {
        &self.victim
    }

    pub fn adversary_indices(&self) -> &[usize] {
        &self.adversary
    }

    pub fn victim_part(&self, s: &[f64]) -> Vec<f64> {
        self.victim.iter().map(|&i| s[i]).collect()
    }

    pub fn adversary_part(&self, s: &[f64]) -> Vec<f64> {
        self.adversary.iter().map(|&i| s[i]).collect()
    }

    /// Inverse of the two projections.
    pub fn assemble(&self, victim: &[f64], adversary: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for (&i, &v) in self.victim.iter().zip(victim) {
            s[i] = v;
        }
        for (&i, &v) in self.adversary.iter().zip(adversary) {
            s[i] = v;
        }
        s
    }
}

/// How the adversary is paid for a victim step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryReward {
    /// −1 on the step the victim succeeds, else 0.
    #[default]
    SparseIndicator,
    /// The negated per-step victim reward (dense-task comparison mode).
    NegatedDense,
}

impl AdversaryReward {
    fn pay(self, out: &StepOutcome) -> f64 {
        match self {
            AdversaryReward::SparseIndicator => {
                if out.success {
                    -1.0
                } else {
                    0.0
                }
            }
            AdversaryReward::NegatedDense => -out.victim_reward,
        }
    }
}

/// Single-agent threat model: the adversary sees the victim's true state and adds an
/// ℓ∞-bounded perturbation to the victim's observation.
pub struct PerturbationMdp {
    inner: Box<dyn Environment>,
    victim: VictimPolicy,
    epsilon: f64,
    reward: AdversaryReward,
    spec: EnvSpec,
    state: Vec<f64>,
    last_perturbation: Vec<f64>,
}

impl PerturbationMdp {
    pub fn new(
        inner: Box<dyn Environment>,
        victim: VictimPolicy,
        epsilon: f64,
        reward: AdversaryReward,
    ) -> Result<Self, EnvError> {
        let inner_spec = inner.spec().clone();
        if victim.observation_dim() != inner_spec.state_dim {
            return Err(EnvError::ObservationMismatch { victim: victim.observation_dim(), env: inner_spec.state_dim });
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(EnvError::InvalidParameter(format!("perturbation budget {epsilon} must be finite and >= 0")));
        }
        let dim = inner_spec.state_dim;
        let spec = EnvSpec {
            name: format!("{}/perturbation", inner_spec.name),
            state_dim: dim,
            action: ActionSpec::continuous_box(dim, epsilon),
            horizon: inner_spec.horizon,
            discount: inner_spec.discount,
        };
        Ok(Self { inner, victim, epsilon, reward, spec, state: vec![0.0; dim], last_perturbation: vec![0.0; dim] })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn victim(&self) -> &VictimPolicy {
        &self.victim
    }

    /// The clamped perturbation applied on the most recent step.
    pub fn last_perturbation(&self) -> &[f64] {
        &self.last_perturbation
    }
}

impl Environment for PerturbationMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = self.inner.reset(seed);
        self.last_perturbation.iter_mut().for_each(|x| *x = 0.0);
        self.state.clone()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        self.spec.action.check(action)?;
        let raw = action.as_continuous().expect("checked");
        let eps = self.epsilon;
        let delta: Vec<f64> = raw.iter().map(|a| a.clamp(-eps, eps)).collect();
        let observed: Vec<f64> = self.state.iter().zip(&delta).map(|(s, d)| s + d).collect();
        let victim_action = self.victim.act(&observed);
        let out = self.inner.step(&victim_action)?;
        self.last_perturbation = delta;
        self.state.clone_from(&out.state);
        Ok(StepOutcome { reward: self.reward.pay(&out), ..out })
    }

    fn nominal_start(&self) -> Vec<f64> {
        self.inner.nominal_start()
    }
}

/// Multi-agent threat model: the victim's policy is fixed, so the game reduces to an MDP
/// over the joint state in which the adversary controls the opponent.
pub struct FixedVictimMdp {
    inner: Box<dyn MarkovGame>,
    victim: VictimPolicy,
    spec: EnvSpec,
    projection: StateProjection,
    state: Vec<f64>,
}

impl FixedVictimMdp {
    pub fn new(inner: Box<dyn MarkovGame>, victim: VictimPolicy, reward: AdversaryReward) -> Result<Self, EnvError> {
        let g = inner.spec().clone();
        if victim.observation_dim() != g.state_dim {
            return Err(EnvError::ObservationMismatch { victim: victim.observation_dim(), env: g.state_dim });
        }
        if reward != AdversaryReward::SparseIndicator {
            return Err(EnvError::InvalidParameter("two-player games pay the adversary the negated success indicator".into()));
        }
        let spec = EnvSpec {
            name: format!("{}/fixed-victim", g.name),
            state_dim: g.state_dim,
            action: g.adversary_action.clone(),
            horizon: g.horizon,
            discount: g.discount,
        };
        Ok(Self { inner, victim, spec, projection: g.projection, state: vec![0.0; g.state_dim] })
    }

    pub fn projection(&self) -> &StateProjection {
        &self.projection
    }

    pub fn victim(&self) -> &VictimPolicy {
        &self.victim
    }
}

impl Environment for FixedVictimMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = self.inner.reset(seed);
        self.state.clone()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let victim_action = self.victim.act(&self.state);
        let out = self.inner.step_joint(&victim_action, action)?;
        self.state.clone_from(&out.state);
        let reward = AdversaryReward::SparseIndicator.pay(&out);
        Ok(StepOutcome { reward, ..out })
    }

    fn nominal_start(&self) -> Vec<f64> {
        self.inner.nominal_start()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GateRun, GateRunParams, GateRunner, GreedyGoal, PointGoal, PointGoalParams};

    fn point_goal_attack(eps: f64) -> PerturbationMdp {
        let params = PointGoalParams::default();
        let victim = VictimPolicy::GreedyGoal(GreedyGoal { params: params.clone() });
        PerturbationMdp::new(Box::new(PointGoal::new(params).unwrap()), victim, eps, AdversaryReward::SparseIndicator)
            .unwrap()
    }

    #[test]
    fn zero_perturbation_matches_unattacked_rollout() {
        let params = PointGoalParams::default();
        let victim = VictimPolicy::GreedyGoal(GreedyGoal { params: params.clone() });
        let mut plain = PointGoal::new(params).unwrap();
        let mut attacked = point_goal_attack(0.05);
        let mut s = plain.reset(11);
        assert_eq!(attacked.reset(11), s);
        loop {
            let a = plain.step(&victim.act(&s)).unwrap();
            let b = attacked.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            assert_eq!(a.state, b.state);
            assert_eq!(a.success, b.success);
            s = a.state;
            if a.terminal || a.truncated {
                break;
            }
        }
    }

    #[test]
    fn perturbation_is_clamped_to_budget() {
        let mut env = point_goal_attack(0.05);
        env.reset(0);
        env.step(&Action::Continuous(vec![0.5, -0.01])).unwrap();
        assert_eq!(env.last_perturbation(), &[0.05, -0.01]);
    }

    #[test]
    fn adversary_reward_is_negated_success() {
        let mut env = point_goal_attack(0.0);
        env.reset(2);
        loop {
            let out = env.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            assert_eq!(out.reward, if out.success { -1.0 } else { 0.0 });
            if out.terminal || out.truncated {
                assert!(out.success);
                break;
            }
        }
    }

    #[test]
    fn projection_partition_is_validated() {
        assert!(StateProjection::new(4, vec![0, 1], vec![2, 3]).is_ok());
        assert!(StateProjection::new(4, vec![0, 1], vec![1, 3]).is_err());
        assert!(StateProjection::new(4, vec![0], vec![2, 3]).is_err());
        let p = StateProjection::new(4, vec![0, 1], vec![2, 3]).unwrap();
        let s = [0.1, 0.2, 0.3, 0.4];
        let mut joined = p.victim_part(&s);
        joined.extend(p.adversary_part(&s));
        assert_eq!(joined, s);
        assert_eq!(p.assemble(&p.victim_part(&s), &p.adversary_part(&s)), s);
    }

    #[test]
    fn mismatched_victim_is_rejected() {
        let params = PointGoalParams::default();
        let err = PerturbationMdp::new(
            Box::new(PointGoal::new(params).unwrap()),
            VictimPolicy::GateRunner(GateRunner::default()),
            0.05,
            AdversaryReward::SparseIndicator,
        )
        .err()
        .unwrap();
        assert_eq!(err, EnvError::ObservationMismatch { victim: 4, env: 2 });
        assert!(FixedVictimMdp::new(
            Box::new(GateRun::new(GateRunParams::default()).unwrap()),
            VictimPolicy::GateRunner(GateRunner::default()),
            AdversaryReward::NegatedDense
        )
        .is_err());
    }
}
