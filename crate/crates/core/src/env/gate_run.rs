use rand::Rng as _;

use super::{
    validate_horizon_discount, Action, ActionSpec, EnvError, GameSpec, MarkovGame, StateProjection, StepOutcome,
};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GateRunParams {
    pub runner_speed: f64,
    pub blocker_speed: f64,
    /// Runner is frozen for a step when the blocker is strictly closer than this.
    pub collision_radius: f64,
    /// Runner wins when its x reaches this line.
    pub gate_x: f64,
    pub runner_start: [f64; 2],
    pub runner_start_jitter: [f64; 2],
    pub blocker_start: [f64; 2],
    pub blocker_start_jitter: [f64; 2],
    pub horizon: usize,
    pub discount: f64,
}

impl Default for GateRunParams {
    fn default() -> Self {
        Self {
            runner_speed: 0.05,
            blocker_speed: 0.07,
            collision_radius: 0.15,
            gate_x: 1.0,
            runner_start: [-0.9, 0.0],
            runner_start_jitter: [0.0, 0.4],
            blocker_start: [0.1, 0.0],
            blocker_start_jitter: [0.3, 0.6],
            horizon: 45,
            discount: 0.99,
        }
    }
}

/// Two-player gate race on `[-1, 1]²`.
///
/// Joint state is `[runner_x, runner_y, blocker_x, blocker_y]`; the runner (victim) owns
/// the first two coordinates, the blocker (adversary) the last two. Both actions are
/// velocities in `[-1, 1]²` scaled by the player's speed. Collision is checked on the
/// positions before the move.
pub struct GateRun {
    params: GateRunParams,
    spec: GameSpec,
    runner: [f64; 2],
    blocker: [f64; 2],
    t: usize,
    done: bool,
}

impl GateRun {
    pub fn new(params: GateRunParams) -> Result<Self, EnvError> {
        validate_horizon_discount(params.horizon, params.discount)?;
        if params.runner_speed <= 0.0 || params.blocker_speed < 0.0 || params.collision_radius < 0.0 {
            return Err(EnvError::InvalidParameter("speeds and radius must be non-negative".into()));
        }
        let spec = GameSpec {
            name: "gate-run".into(),
            state_dim: 4,
            victim_action: ActionSpec::continuous_box(2, 1.0),
            adversary_action: ActionSpec::continuous_box(2, 1.0),
            projection: StateProjection::new(4, vec![0, 1], vec![2, 3]).expect("static partition"),
            horizon: params.horizon,
            discount: params.discount,
        };
        Ok(Self { params, spec, runner: [0.0; 2], blocker: [0.0; 2], t: 0, done: true })
    }

    pub fn params(&self) -> &GateRunParams {
        &self.params
    }

    pub fn reset_to(&mut self, runner: [f64; 2], blocker: [f64; 2]) -> Vec<f64> {
        self.runner = runner;
        self.blocker = blocker;
        self.t = 0;
        self.done = false;
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        vec![self.runner[0], self.runner[1], self.blocker[0], self.blocker[1]]
    }

    pub fn collides(&self, runner: [f64; 2], blocker: [f64; 2]) -> bool {
        let d = ((runner[0] - blocker[0]).powi(2) + (runner[1] - blocker[1]).powi(2)).sqrt();
        d < self.params.collision_radius
    }
}

fn moved(p: [f64; 2], v: &[f64], speed: f64) -> [f64; 2] {
    [
        (p[0] + speed * v[0].clamp(-1.0, 1.0)).clamp(-1.0, 1.0),
        (p[1] + speed * v[1].clamp(-1.0, 1.0)).clamp(-1.0, 1.0),
    ]
}

impl MarkovGame for GateRun {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, 0);
        let p = &self.params;
        let mut draw = |c: [f64; 2], j: [f64; 2]| {
            [
                (c[0] + j[0] * rng.random_range(-1.0..=1.0)).clamp(-1.0, 1.0),
                (c[1] + j[1] * rng.random_range(-1.0..=1.0)).clamp(-1.0, 1.0),
            ]
        };
        let runner = draw(p.runner_start, p.runner_start_jitter);
        let blocker = draw(p.blocker_start, p.blocker_start_jitter);
        self.reset_to(runner, blocker)
    }

    fn step_joint(&mut self, victim: &Action, adversary: &Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.spec.victim_action.check(victim)?;
        self.spec.adversary_action.check(adversary)?;
        let frozen = self.collides(self.runner, self.blocker);
        if !frozen {
            self.runner = moved(self.runner, victim.as_continuous().expect("checked"), self.params.runner_speed);
        }
        self.blocker = moved(self.blocker, adversary.as_continuous().expect("checked"), self.params.blocker_speed);
        self.t += 1;
        let success = self.runner[0] >= self.params.gate_x;
        let truncated = !success && self.t >= self.params.horizon;
        self.done = success || truncated;
        let reward = if success { 1.0 } else { 0.0 };
        Ok(StepOutcome { state: self.state(), reward, victim_reward: reward, terminal: success, truncated, success })
    }

    fn nominal_start(&self) -> Vec<f64> {
        let p = &self.params;
        vec![p.runner_start[0], p.runner_start[1], p.blocker_start[0], p.blocker_start[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_when_blocker_close() {
        let mut g = GateRun::new(GateRunParams::default()).unwrap();
        g.reset_to([0.0, 0.0], [0.1, 0.0]);
        let out = g.step_joint(&Action::Continuous(vec![1.0, 0.0]), &Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(&out.state[..2], &[0.0, 0.0]);
        g.reset_to([0.0, 0.0], [0.5, 0.5]);
        let out = g.step_joint(&Action::Continuous(vec![1.0, 0.0]), &Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert!((out.state[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn reset_is_seeded() {
        let mut g = GateRun::new(GateRunParams::default()).unwrap();
        assert_eq!(g.reset(9), g.reset(9));
        assert_ne!(g.reset(9), g.reset(10));
    }
}
