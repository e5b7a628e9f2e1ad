use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{validate_horizon_discount, Action, ActionSpec, EnvError, EnvSpec, Environment, StepOutcome};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// 1 on the step the goal box is entered, else 0.
    #[default]
    Sparse,
    /// Per-step decrease of the shortest-path distance to the goal, plus 1 on success.
    Dense,
}

/// A vertical wall at `x` that can only be crossed through `|y - gap_center| <= gap_half_width`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallGap {
    pub x: f64,
    pub gap_center: f64,
    pub gap_half_width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointGoalParams {
    pub goal: [f64; 2],
    /// Success when the ℓ∞ distance to `goal` is at most this.
    pub success_radius: f64,
    /// Per-coordinate displacement for a unit action.
    pub max_speed: f64,
    pub start_center: [f64; 2],
    pub start_half_extent: [f64; 2],
    pub wall: Option<WallGap>,
    pub horizon: usize,
    pub discount: f64,
    pub reward: RewardKind,
}

impl Default for PointGoalParams {
    fn default() -> Self {
        Self {
            goal: [0.7, 0.0],
            success_radius: 0.1,
            max_speed: 0.05,
            start_center: [-0.7, 0.0],
            start_half_extent: [0.1, 0.3],
            wall: Some(WallGap { x: 0.0, gap_center: 0.0, gap_half_width: 0.04 }),
            horizon: 100,
            discount: 0.99,
            reward: RewardKind::Sparse,
        }
    }
}

/// Point mass in `[-1, 1]²` steered by a bounded velocity toward a goal box.
///
/// The action is a velocity in `[-1, 1]²` (clamped) scaled by `max_speed`. A wall with a
/// narrow gap separates the start region from the goal; a move that would cross the wall
/// outside the gap keeps its `y` component and loses its `x` component.
pub struct PointGoal {
    params: PointGoalParams,
    spec: EnvSpec,
    pos: [f64; 2],
    t: usize,
    done: bool,
}

impl PointGoal {
    pub fn new(params: PointGoalParams) -> Result<Self, EnvError> {
        validate_horizon_discount(params.horizon, params.discount)?;
        if params.max_speed <= 0.0 || params.success_radius <= 0.0 {
            return Err(EnvError::InvalidParameter("speed and success radius must be positive".into()));
        }
        let spec = EnvSpec {
            name: "point-goal".into(),
            state_dim: 2,
            action: ActionSpec::continuous_box(2, 1.0),
            horizon: params.horizon,
            discount: params.discount,
        };
        Ok(Self { params, spec, pos: [0.0; 2], t: 0, done: true })
    }

    pub fn params(&self) -> &PointGoalParams {
        &self.params
    }

    /// Places the point at `pos` and starts a fresh episode there.
    pub fn reset_to(&mut self, pos: [f64; 2]) -> Vec<f64> {
        self.pos = pos.map(|c| c.clamp(-1.0, 1.0));
        self.t = 0;
        self.done = false;
        self.pos.to_vec()
    }

    pub fn in_goal(&self, p: [f64; 2]) -> bool {
        let g = self.params.goal;
        (p[0] - g[0]).abs().max((p[1] - g[1]).abs()) <= self.params.success_radius
    }

    /// Shortest-path distance to the goal around the wall.
    pub fn path_distance(&self, p: [f64; 2]) -> f64 {
        let g = self.params.goal;
        let direct = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
        let Some(w) = self.params.wall else { return direct };
        if (p[0] < w.x) == (g[0] < w.x) || p[0] == g[0] {
            return direct;
        }
        // The path length through (w.x, y) is convex in y, so the best crossing inside the
        // gap is the straight-line crossing clamped to the gap.
        let y_line = p[1] + (g[1] - p[1]) * (w.x - p[0]) / (g[0] - p[0]);
        let y = y_line.clamp(w.gap_center - w.gap_half_width, w.gap_center + w.gap_half_width);
        let a = ((p[0] - w.x).powi(2) + (p[1] - y).powi(2)).sqrt();
        let b = ((g[0] - w.x).powi(2) + (g[1] - y).powi(2)).sqrt();
        a + b
    }

    fn advance(&self, from: [f64; 2], vel: [f64; 2]) -> [f64; 2] {
        let s = self.params.max_speed;
        let mut to = [
            (from[0] + s * vel[0].clamp(-1.0, 1.0)).clamp(-1.0, 1.0),
            (from[1] + s * vel[1].clamp(-1.0, 1.0)).clamp(-1.0, 1.0),
        ];
        if let Some(w) = self.params.wall {
            let crosses = (from[0] < w.x) != (to[0] < w.x);
            if crosses {
                let frac = (w.x - from[0]) / (to[0] - from[0]);
                let y = from[1] + frac * (to[1] - from[1]);
                if (y - w.gap_center).abs() > w.gap_half_width {
                    to[0] = from[0];
                }
            }
        }
        to
    }
}

impl Environment for PointGoal {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, 0);
        let c = self.params.start_center;
        let h = self.params.start_half_extent;
        let pos = [
            c[0] + h[0] * rng.random_range(-1.0..=1.0),
            c[1] + h[1] * rng.random_range(-1.0..=1.0),
        ];
        self.reset_to(pos)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.spec.action.check(action)?;
        let a = action.as_continuous().expect("checked");
        let before = self.pos;
        self.pos = self.advance(before, [a[0], a[1]]);
        self.t += 1;
        let success = self.in_goal(self.pos);
        let truncated = !success && self.t >= self.params.horizon;
        self.done = success || truncated;
        let bonus = if success { 1.0 } else { 0.0 };
        let reward = match self.params.reward {
            RewardKind::Sparse => bonus,
            RewardKind::Dense => self.path_distance(before) - self.path_distance(self.pos) + bonus,
        };
        Ok(StepOutcome {
            state: self.pos.to_vec(),
            reward,
            victim_reward: reward,
            terminal: success,
            truncated,
            success,
        })
    }

    fn nominal_start(&self) -> Vec<f64> {
        self.params.start_center.to_vec()
    }
}
