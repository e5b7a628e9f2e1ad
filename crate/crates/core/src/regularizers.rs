//! Intrinsic bonuses for the four regulariser families.
//!
//! Each bonus is the gradient of its regulariser with respect to the adversarial state
//! distribution, evaluated with KNN density estimates:
//!
//! | kind | regulariser                | bonus `r_I(s)`                     |
//! |------|----------------------------|------------------------------------|
//! | SC   | `-Σ d ln d`                | `-ln d̂(s) - 1`, `d̂` over this batch |
//! | PC   | `-Σ ρ ln ρ`, `ρ = Σ_i d_i` | `-ln ρ̂(s) - 1`, `ρ̂` over all batches |
//! | R    | `-‖Π_ν(s) - s_target‖`     | the same, per state                |
//! | D    | `KL(π ‖ π_mimic)`          | the same, per state                |
//!
//! In two-player games SC and PC mix the adversary-coordinate and victim-coordinate
//! terms as `(1 - ξ)·adversary + ξ·victim`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{self, BufferOptions, CoverBuffer, DensityError, Metric, Query};
use crate::env::StateProjection;
use crate::nn::loss::{self, LossSpec};
use crate::nn::{ActionDistribution, Adam, NnError, PolicyHandle, PolicyInit};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizerError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("target state has {got} coordinates, victim state has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mimic update needs at least one stored adversary snapshot")]
    NoSnapshots,
    #[error("unknown regularizer `{0}` (expected none, sc, pc, r or d)")]
    UnknownKind(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    Sc,
    #[default]
    Pc,
    R,
    D,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 5] =
        [RegularizerKind::None, RegularizerKind::Sc, RegularizerKind::Pc, RegularizerKind::R, RegularizerKind::D];

    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Sc => "sc",
            RegularizerKind::Pc => "pc",
            RegularizerKind::R => "r",
            RegularizerKind::D => "d",
        }
    }

    /// Whether the kind needs KNN density estimates.
    pub fn uses_density(self) -> bool {
        matches!(self, RegularizerKind::Sc | RegularizerKind::Pc)
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegularizerKind {
    type Err = RegularizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| RegularizerError::UnknownKind(s.to_string()))
    }
}

/// Mimic-policy training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MimicSchedule {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Store a snapshot every this many iterations.
    pub snapshot_every: u64,
    pub max_snapshots: usize,
}

impl Default for MimicSchedule {
    fn default() -> Self {
        Self { steps: 5, batch: 512, learning_rate: 1e-3, snapshot_every: 1, max_snapshots: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    /// Weight of the victim-coordinate term in two-player games.
    pub xi: f64,
    /// R only: target victim state; defaults to the victim part of the nominal start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    pub k: usize,
    pub c0: f64,
    pub normalize_bonus: bool,
    /// Standardise coordinates by the cover buffer's running std before KNN queries.
    pub normalize_states: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    pub mimic: MimicSchedule,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::default(),
            xi: 0.5,
            target: None,
            k: 10,
            c0: 1e-6,
            normalize_bonus: true,
            normalize_states: true,
            buffer_capacity: None,
            mimic: MimicSchedule::default(),
        }
    }
}

impl RegularizerSpec {
    pub fn of_kind(kind: RegularizerKind) -> Self {
        Self { kind, ..Self::default() }
    }

    /// `(key, reason)` for the first violated bound.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(("xi", format!("{} outside [0, 1]", self.xi)));
        }
        if self.k == 0 {
            return Err(("k", "must be at least 1".into()));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(("c0", format!("{} must be positive", self.c0)));
        }
        if let Some(t) = &self.target {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(("target", "must be finite".into()));
            }
        }
        if let Some(c) = self.buffer_capacity {
            if c <= self.k {
                return Err(("buffer_capacity", format!("{c} must exceed k = {}", self.k)));
            }
        }
        let m = &self.mimic;
        if m.batch == 0 {
            return Err(("mimic.batch", "must be at least 1".into()));
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return Err(("mimic.learning_rate", format!("{} must be positive", m.learning_rate)));
        }
        if m.snapshot_every == 0 {
            return Err(("mimic.snapshot_every", "must be at least 1".into()));
        }
        if m.max_snapshots < 2 {
            return Err(("mimic.max_snapshots", "must be at least 2".into()));
        }
        Ok(())
    }
}

/// `-ln d - 1`, the gradient of `-d ln d`.
pub fn entropy_gradient(density: f64) -> f64 {
    -density.ln() - 1.0
}

/// `-Σ d ln d` over a tabular distribution (terms with `d = 0` contribute 0).
pub fn tabular_sc_objective(d: &[f64]) -> f64 {
    -d.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `-ln d(s) - 1` for every state of a tabular distribution.
pub fn tabular_sc_bonus(d: &[f64]) -> Vec<f64> {
    d.iter().map(|x| entropy_gradient(*x)).collect()
}

/// `-Σ ρ ln ρ` with `ρ = Σ past + d`.
pub fn tabular_pc_objective(past: &[Vec<f64>], d: &[f64]) -> f64 {
    tabular_sc_objective(&policy_cover(past, d))
}

/// `-ln ρ(s) - 1` with `ρ = Σ past + d`.
pub fn tabular_pc_bonus(past: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    tabular_sc_bonus(&policy_cover(past, d))
}

fn policy_cover(past: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    let mut rho = d.to_vec();
    for p in past {
        for (r, x) in rho.iter_mut().zip(p) {
            *r += x;
        }
    }
    rho
}

/// `-‖s - target‖` for each victim-space state.
pub fn bonus_r(victim_states: &[Vec<f64>], target: &[f64]) -> Result<Vec<f64>, RegularizerError> {
    victim_states
        .iter()
        .map(|s| {
            if s.len() != target.len() {
                return Err(RegularizerError::DimensionMismatch { expected: s.len(), got: target.len() });
            }
            Ok(-s.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect()
}

/// `KL(π(·|s) ‖ π_mimic(·|s))` for each state.
pub fn bonus_d(states: &[Vec<f64>], adversary: &PolicyHandle, mimic: &PolicyHandle) -> Result<Vec<f64>, RegularizerError> {
    states
        .iter()
        .map(|s| Ok(adversary.forward(s)?.dist.kl(&mimic.forward(s)?.dist)?))
        .collect()
}

/// `-ln d̂(s) - 1` with `d̂` the KNN density of each query in `buffer`.
pub fn bonus_knn(
    buffer: &CoverBuffer,
    queries: &[Query<'_>],
    k: usize,
    c0: f64,
    metric: &Metric,
) -> Result<Vec<f64>, RegularizerError> {
    Ok(density::estimate_density(buffer, queries, k, c0, metric)?.into_iter().map(|e| entropy_gradient(e.density)).collect())
}

/// `(1 - ξ)·adversary + ξ·victim`, skipping a term whose weight is zero.
pub fn xi_mix(xi: f64, adversary: Option<&[f64]>, victim: Option<&[f64]>) -> Vec<f64> {
    match (xi, adversary, victim) {
        (0.0, Some(a), _) => a.to_vec(),
        (1.0, _, Some(v)) => v.to_vec(),
        (x, Some(a), Some(v)) => a.iter().zip(v).map(|(a, v)| (1.0 - x) * a + x * v).collect(),
        _ => panic!("missing ξ-mix term"),
    }
}

/// Divides bonuses by their running root-mean-square (no centring).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BonusNormalizer {
    sum_sq: f64,
    count: u64,
}

impl BonusNormalizer {
    pub const FLOOR: f64 = 1e-8;

    pub fn scale(&self) -> f64 {
        if self.count == 0 {
            1.0
        } else {
            (self.sum_sq / self.count as f64).sqrt().max(Self::FLOOR)
        }
    }

    /// Folds `bonuses` into the running statistics, then rescales them in place.
    pub fn normalize(&mut self, bonuses: &mut [f64]) {
        for b in bonuses.iter() {
            self.sum_sq += b * b;
            self.count += 1;
        }
        let s = self.scale();
        bonuses.iter_mut().for_each(|b| *b /= s);
    }
}

/// Mimic policy trained to imitate a thinned history of adversary snapshots.
#[derive(Clone, Debug)]
pub struct MimicState {
    policy: PolicyHandle,
    adam: Adam,
    snapshots: Vec<(u64, Vec<f64>)>,
    schedule: MimicSchedule,
    sampler: rng::Rng,
    updates: u64,
}

impl MimicState {
    /// A fresh mimic with the adversary's architecture and its own initialisation.
    pub fn new(adversary: &PolicyHandle, init: &PolicyInit, schedule: MimicSchedule, seed: u64) -> Self {
        let policy = PolicyHandle::new(adversary.arch().clone(), init, &mut rng::stream(seed, rng::STREAM_MIMIC_INIT));
        Self::from_policy(policy, schedule, seed)
    }

    pub fn from_policy(policy: PolicyHandle, schedule: MimicSchedule, seed: u64) -> Self {
        let mut adam = Adam::new(policy.params().len(), schedule.learning_rate);
        adam.max_grad_norm = None;
        Self { policy, adam, snapshots: Vec::new(), schedule, sampler: rng::stream(seed, rng::STREAM_MIMIC_SAMPLING), updates: 0 }
    }

    pub fn policy(&self) -> &PolicyHandle {
        &self.policy
    }

    pub fn snapshot_tags(&self) -> Vec<u64> {
        self.snapshots.iter().map(|s| s.0).collect()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Stores `adversary` tagged `iteration` if the schedule asks for it; above the cap,
    /// drops the interior snapshot whose neighbours are closest together.
    pub fn push_snapshot(&mut self, iteration: u64, adversary: &PolicyHandle) {
        if !iteration.is_multiple_of(self.schedule.snapshot_every) {
            return;
        }
        self.snapshots.push((iteration, adversary.snapshot()));
        if self.snapshots.len() > self.schedule.max_snapshots {
            let drop = (1..self.snapshots.len() - 1)
                .min_by_key(|&i| self.snapshots[i + 1].0 - self.snapshots[i - 1].0)
                .expect("at least three snapshots");
            self.snapshots.remove(drop);
        }
    }

    /// Runs the scheduled Adam steps on the mean KL from the mimic to every snapshot,
    /// over states drawn uniformly from `cover`. Returns the loss before each step.
    pub fn update(&mut self, cover: &CoverBuffer) -> Result<Vec<f64>, RegularizerError> {
        if self.snapshots.is_empty() {
            return Err(RegularizerError::NoSnapshots);
        }
        if self.schedule.steps == 0 || cover.is_empty() {
            return Ok(Vec::new());
        }
        let idx: Vec<usize> = (0..self.schedule.batch).map(|_| self.sampler.random_range(0..cover.len())).collect();
        let states: Vec<&[f64]> = idx.iter().map(|&i| cover.point(i)).collect();
        let handles: Vec<PolicyHandle> = self
            .snapshots
            .iter()
            .map(|(_, p)| PolicyHandle::from_params(self.policy.arch().clone(), p.clone()))
            .collect::<Result<_, _>>()?;
        let targets: Vec<Vec<ActionDistribution>> = states
            .iter()
            .map(|s| handles.iter().map(|h| Ok(h.forward(s)?.dist)).collect::<Result<_, NnError>>())
            .collect::<Result<_, _>>()?;
        let mut losses = Vec::with_capacity(self.schedule.steps);
        for _ in 0..self.schedule.steps {
            let out = loss::loss_and_grad(&self.policy, &LossSpec::MimicKl { states: &states, targets: &targets })?;
            losses.push(out.loss);
            self.adam.step(&mut self.policy, &out.grad);
        }
        self.updates += 1;
        Ok(losses)
    }
}

/// One state space the KNN bonuses are measured in, with its own cover buffer.
#[derive(Clone, Debug)]
struct Space {
    /// Coordinates of the full state kept in this space; `None` keeps all.
    coords: Option<Vec<usize>>,
    weight: f64,
    cover: CoverBuffer,
}

impl Space {
    fn project(&self, s: &[f64]) -> Vec<f64> {
        match &self.coords {
            Some(c) => c.iter().map(|&i| s[i]).collect(),
            None => s.to_vec(),
        }
    }
}

/// Everything the intrinsic stream needs across iterations: the union buffer, the
/// per-space cover buffers, the mimic and the bonus normaliser.
#[derive(Clone, Debug)]
pub struct IntrinsicState {
    spec: RegularizerSpec,
    cover: CoverBuffer,
    spaces: Vec<Space>,
    target: Vec<f64>,
    projection: Option<StateProjection>,
    mimic: Option<MimicState>,
    normalizer: BonusNormalizer,
}

impl IntrinsicState {
    /// `projection` is `Some` in two-player games; `nominal_start` is the full start state.
    pub fn new(
        spec: RegularizerSpec,
        state_dim: usize,
        projection: Option<StateProjection>,
        nominal_start: &[f64],
        adversary: &PolicyHandle,
        seed: u64,
    ) -> Result<Self, RegularizerError> {
        let opts = BufferOptions { normalize: spec.normalize_states, capacity: spec.buffer_capacity, seed };
        let cover = CoverBuffer::new(state_dim, opts.clone());
        let mut spaces = Vec::new();
        if spec.kind.uses_density() {
            match &projection {
                None => spaces.push(Space { coords: None, weight: 1.0, cover: CoverBuffer::new(state_dim, opts.clone()) }),
                Some(p) => {
                    let parts = [(p.adversary_indices(), 1.0 - spec.xi), (p.victim_indices(), spec.xi)];
                    for (coords, weight) in parts {
                        let coords = coords.to_vec();
                        let cover = CoverBuffer::new(coords.len(), opts.clone());
                        spaces.push(Space { coords: Some(coords), weight, cover });
                    }
                }
            }
        }
        let victim_start = projection.as_ref().map_or(nominal_start.to_vec(), |p| p.victim_part(nominal_start));
        let target = spec.target.clone().unwrap_or(victim_start.clone());
        if target.len() != victim_start.len() {
            return Err(RegularizerError::DimensionMismatch { expected: victim_start.len(), got: target.len() });
        }
        let mimic = (spec.kind == RegularizerKind::D)
            .then(|| MimicState::new(adversary, &PolicyInit::default(), spec.mimic.clone(), seed));
        Ok(Self { spec, cover, spaces, target, projection, mimic, normalizer: BonusNormalizer::default() })
    }

    pub fn spec(&self) -> &RegularizerSpec {
        &self.spec
    }

    /// The union buffer over full states.
    pub fn cover(&self) -> &CoverBuffer {
        &self.cover
    }

    pub fn mimic(&self) -> Option<&MimicState> {
        self.mimic.as_ref()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Adds this iteration's states to every union buffer.
    pub fn observe(&mut self, states: &[Vec<f64>], iteration: u64) -> Vec<Vec<Option<usize>>> {
        self.cover.insert_batch(states, iteration);
        self.spaces
            .iter_mut()
            .map(|sp| {
                let projected: Vec<Vec<f64>> = states.iter().map(|s| sp.project(s)).collect();
                sp.cover.insert_batch(&projected, iteration)
            })
            .collect()
    }

    /// Per-step bonuses for this iteration's states, or `None` for kind `none`.
    ///
    /// Call after [`IntrinsicState::observe`] with the slots it returned.
    pub fn bonuses(
        &mut self,
        states: &[Vec<f64>],
        slots: &[Vec<Option<usize>>],
        adversary: &PolicyHandle,
        iteration: u64,
    ) -> Result<Option<Vec<f64>>, RegularizerError> {
        let spec = &self.spec;
        let mut raw = match spec.kind {
            RegularizerKind::None => return Ok(None),
            RegularizerKind::Sc | RegularizerKind::Pc => {
                let mut terms: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.spaces.len());
                for (sp, slot) in self.spaces.iter().zip(slots) {
                    if sp.weight == 0.0 && self.spaces.len() > 1 {
                        terms.push(None);
                        continue;
                    }
                    let metric = sp.cover.metric();
                    let b = if spec.kind == RegularizerKind::Sc {
                        let local: Vec<Vec<f64>> = states.iter().map(|s| sp.project(s)).collect();
                        let batch = CoverBuffer::from_states(sp.cover.dim(), &local);
                        let q: Vec<Query> = (0..local.len()).map(Query::Member).collect();
                        bonus_knn(&batch, &q, spec.k, spec.c0, &metric)?
                    } else {
                        let local: Vec<Vec<f64>> = states.iter().map(|s| sp.project(s)).collect();
                        let q: Vec<Query> = slot
                            .iter()
                            .zip(&local)
                            .map(|(m, p)| m.map_or(Query::External(p), Query::Member))
                            .collect();
                        bonus_knn(&sp.cover, &q, spec.k, spec.c0, &metric)?
                    };
                    terms.push(Some(b));
                }
                match terms.as_slice() {
                    [single] => single.clone().expect("single space always computed"),
                    [a, v] => xi_mix(spec.xi, a.as_deref(), v.as_deref()),
                    _ => unreachable!("one or two spaces"),
                }
            }
            RegularizerKind::R => {
                let victim: Vec<Vec<f64>> = match &self.projection {
                    Some(p) => states.iter().map(|s| p.victim_part(s)).collect(),
                    None => states.to_vec(),
                };
                bonus_r(&victim, &self.target)?
            }
            RegularizerKind::D => {
                let mimic = self.mimic.as_mut().expect("mimic exists for kind d");
                mimic.push_snapshot(iteration, adversary);
                mimic.update(&self.cover)?;
                bonus_d(states, adversary, &mimic.policy)?
            }
        };
        if spec.normalize_bonus {
            self.normalizer.normalize(&mut raw);
        }
        Ok(Some(raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridChain, GridChainParams};
    use crate::nn::{Architecture, HeadKind};

    #[test]
    fn unit_density_gives_minus_one() {
        assert_eq!(entropy_gradient(1.0), -1.0);
        let b = CoverBuffer::from_states(1, &[vec![0.0], vec![1.0]]);
        let v = bonus_knn(&b, &[Query::Member(0)], 1, 1e-6, &Metric::euclidean()).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-5);
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6 * x[i];
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    }

    #[test]
    fn tabular_bonuses_are_objective_gradients() {
        let chain = GridChain::new(GridChainParams::default()).unwrap();
        let d = chain.discounted_state_distribution(&[[0.3, 0.7]; 5], 0.9);
        let past = vec![chain.discounted_state_distribution(&[[0.8, 0.2]; 5], 0.9)];
        let sc = tabular_sc_bonus(&d);
        let pc = tabular_pc_bonus(&past, &d);
        for i in 0..d.len() {
            let fd = central_difference(tabular_sc_objective, &d, i);
            assert!((fd - sc[i]).abs() <= 1e-6 * sc[i].abs());
            let fd = central_difference(|x| tabular_pc_objective(&past, x), &d, i);
            assert!((fd - pc[i]).abs() <= 1e-6 * pc[i].abs());
        }
    }

    #[test]
    fn r_bonus_examples() {
        assert_eq!(bonus_r(&[vec![0.2, 0.3]], &[0.2, 0.3]).unwrap(), vec![0.0]);
        let v = bonus_r(&[vec![0.5, 0.5]], &[0.0, 0.0]).unwrap()[0];
        assert!((v + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let shifted = bonus_r(&[vec![1.5, -0.5]], &[1.0, -1.0]).unwrap()[0];
        assert!((v - shifted).abs() < 1e-15);
        assert!(bonus_r(&[vec![0.0]], &[0.0, 0.0]).is_err());
    }

    fn policy(seed: u64) -> PolicyHandle {
        let arch = Architecture { input_dim: 2, hidden: [8, 8], output_dim: 2, head: HeadKind::Gaussian };
        PolicyHandle::new(arch, &PolicyInit { policy_gain: 1.0, ..Default::default() }, &mut rng::stream(seed, 0))
    }

    #[test]
    fn d_bonus_is_zero_for_a_copy_and_half_for_unit_mean_shift() {
        let p = policy(0);
        let states = vec![vec![0.1, 0.2], vec![-0.5, 0.9]];
        assert_eq!(bonus_d(&states, &p, &p.clone()).unwrap(), vec![0.0, 0.0]);
        let mut shifted = p.clone();
        let r = shifted.segment_range("policy.bias").unwrap();
        shifted.params_mut()[r.start] += 1.0;
        for b in bonus_d(&states, &p, &shifted).unwrap() {
            assert!((b - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mimic_loss_falls_toward_a_single_snapshot() {
        let target = policy(1);
        let mut m = MimicState::new(&target, &PolicyInit::default(), MimicSchedule { steps: 10, ..Default::default() }, 4);
        m.push_snapshot(0, &target);
        let mut r = rng::stream(2, 0);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let losses = m.update(&CoverBuffer::from_states(2, &pts)).unwrap();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn zero_mimic_steps_leave_it_untouched() {
        let target = policy(1);
        let mut m = MimicState::new(&target, &PolicyInit::default(), MimicSchedule { steps: 0, ..Default::default() }, 4);
        let before = m.policy().snapshot();
        assert_eq!(m.update(&CoverBuffer::from_states(2, &[vec![0.0, 0.0]])), Err(RegularizerError::NoSnapshots));
        m.push_snapshot(0, &target);
        m.update(&CoverBuffer::from_states(2, &[vec![0.0, 0.0]])).unwrap();
        assert_eq!(m.policy().params(), before.as_slice());
    }

    #[test]
    fn snapshot_thinning_keeps_ends_and_cap() {
        let p = policy(0);
        let mut m = MimicState::new(&p, &PolicyInit::default(), MimicSchedule { max_snapshots: 4, ..Default::default() }, 0);
        for it in 0..10 {
            m.push_snapshot(it, &p);
        }
        let tags = m.snapshot_tags();
        assert_eq!(tags.len(), 4);
        assert_eq!((tags[0], tags[3]), (0, 9));
    }

    #[test]
    fn normalizer_examples() {
        let mut n = BonusNormalizer::default();
        let mut last = Vec::new();
        for _ in 0..50 {
            let mut b = vec![-3.0; 16];
            n.normalize(&mut b);
            last = b;
        }
        assert!(last.iter().all(|b| (b + 1.0).abs() < 1e-12));
        let mut z = vec![0.0; 8];
        BonusNormalizer::default().normalize(&mut z);
        assert!(z.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn xi_endpoints_reduce_to_single_terms() {
        let a = [1.0, 2.0];
        let v = [5.0, -7.0];
        assert_eq!(xi_mix(0.0, Some(&a), Some(&v)), a);
        assert_eq!(xi_mix(1.0, Some(&a), Some(&v)), v);
        assert_eq!(xi_mix(0.5, Some(&a), Some(&v)), vec![3.0, -2.5]);
    }

    #[test]
    fn kind_parsing_names_bad_token() {
        assert_eq!("SC".parse::<RegularizerKind>().unwrap(), RegularizerKind::Sc);
        assert_eq!("xx".parse::<RegularizerKind>(), Err(RegularizerError::UnknownKind("xx".into())));
    }
}
