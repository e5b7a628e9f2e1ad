use std::hash::{DefaultHasher, Hash, Hasher};

use super::point_goal::PointGoalParams;
use super::Action;
use crate::nn::PolicyHandle;

/// Scripted go-to-goal controller for `point-goal`: heads for the wall gap first when the
/// goal is on the other side, then for the goal, at full speed per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyGoal {
    pub params: PointGoalParams,
}

impl GreedyGoal {
    fn act(&self, obs: &[f64]) -> Action {
        let p = &self.params;
        let target = match p.wall {
            Some(w) if (obs[0] < w.x) != (p.goal[0] < w.x) => [w.x + p.max_speed * p.goal[0].signum(), w.gap_center],
            _ => p.goal,
        };
        Action::Continuous(
            (0..2).map(|i| ((target[i] - obs[i]) / p.max_speed).clamp(-1.0, 1.0)).collect(),
        )
    }
}

/// Scripted `gate-run` runner: heads straight for the gate; with avoidance on, sidesteps
/// away from a blocker that is close and not yet behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct GateRunner {
    pub avoid: bool,
    pub avoid_radius: f64,
}

impl Default for GateRunner {
    fn default() -> Self {
        Self { avoid: true, avoid_radius: 0.35 }
    }
}

impl GateRunner {
    pub fn naive() -> Self {
        Self { avoid: false, ..Self::default() }
    }

    fn act(&self, s: &[f64]) -> Action {
        let (rx, ry, bx, by) = (s[0], s[1], s[2], s[3]);
        let d = ((bx - rx).powi(2) + (by - ry).powi(2)).sqrt();
        if self.avoid && d < self.avoid_radius && bx > rx - 0.05 {
            let side = if ry >= by { 1.0 } else { -1.0 };
            // hug the arena: if the wall is in the way, go the other way round
            let side = if (ry + side * 0.2).abs() > 1.0 { -side } else { side };
            Action::Continuous(vec![0.5, side])
        } else {
            Action::Continuous(vec![1.0, 0.0])
        }
    }
}

/// The frozen policy under attack. Learned victims act with the mode of their head.
#[derive(Clone, Debug, PartialEq)]
pub enum VictimPolicy {
    Learned(PolicyHandle),
    GreedyGoal(GreedyGoal),
    GateRunner(GateRunner),
}

impl VictimPolicy {
    pub fn act(&self, obs: &[f64]) -> Action {
        match self {
            VictimPolicy::Learned(p) => p.forward(obs).expect("observation dim validated on construction").dist.mode(),
            VictimPolicy::GreedyGoal(g) => g.act(obs),
            VictimPolicy::GateRunner(r) => r.act(obs),
        }
    }

    pub fn observation_dim(&self) -> usize {
        match self {
            VictimPolicy::Learned(p) => p.arch().input_dim,
            VictimPolicy::GreedyGoal(_) => 2,
            VictimPolicy::GateRunner(_) => 4,
        }
    }

    /// Always true: nothing in this crate mutates a victim once constructed.
    pub fn frozen(&self) -> bool {
        true
    }

    /// Hash of every parameter bit; used to prove a run left the victim untouched.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        match self {
            VictimPolicy::Learned(p) => {
                0u8.hash(&mut h);
                for v in p.params() {
                    v.to_bits().hash(&mut h);
                }
            }
            VictimPolicy::GreedyGoal(g) => {
                1u8.hash(&mut h);
                for v in g.params.goal.iter().chain([g.params.max_speed].iter()) {
                    v.to_bits().hash(&mut h);
                }
            }
            VictimPolicy::GateRunner(r) => {
                2u8.hash(&mut h);
                r.avoid.hash(&mut h);
                r.avoid_radius.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, PointGoal};

    #[test]
    fn greedy_victim_solves_point_goal_unattacked() {
        let params = PointGoalParams::default();
        let victim = VictimPolicy::GreedyGoal(GreedyGoal { params: params.clone() });
        let mut env = PointGoal::new(params).unwrap();
        for seed in 0..20 {
            let mut s = env.reset(seed);
            loop {
                let out = env.step(&victim.act(&s)).unwrap();
                s = out.state;
                if out.terminal || out.truncated {
                    assert!(out.success, "seed {seed}");
                    break;
                }
            }
        }
    }

    #[test]
    fn runner_sidesteps_only_when_avoiding() {
        let s = [0.0, 0.0, 0.2, 0.05];
        assert_eq!(GateRunner::default().act(&s), Action::Continuous(vec![0.5, -1.0]));
        assert_eq!(GateRunner::naive().act(&s), Action::Continuous(vec![1.0, 0.0]));
    }
}
