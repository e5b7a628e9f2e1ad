//! K-nearest-neighbour density estimation over replay buffers.
//!
//! [`CoverBuffer`] stores states in insertion order and indexes them with a forest of
//! exact k-d trees (logarithmic method: each tree covers a contiguous index range, and
//! the newest two trees are merged while they have comparable sizes). Queries return
//! exactly what an exhaustive scan returns, including tie-breaking by index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng as _;
use thiserror::Error;

use crate::rng;
use crate::stats::Welford;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("KNN query needs {needed} eligible points, buffer has {available}")]
    InsufficientPoints { needed: usize, available: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("query has {got} coordinates, buffer stores {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("member index {index} out of range for buffer of {len}")]
    NoSuchMember { index: usize, len: usize },
    #[error("c0 = {0} must be positive and finite")]
    BadOffset(f64),
}

/// A KNN query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Query<'a> {
    /// A stored point, excluded from its own neighbour set.
    Member(usize),
    External(&'a [f64]),
}

/// Per-dimension scale applied before taking Euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    weights: Option<Vec<f64>>,
}

impl Metric {
    pub fn euclidean() -> Self {
        Self { weights: None }
    }

    /// Panics on a non-positive or non-finite weight.
    pub fn weighted(weights: Vec<f64>) -> Self {
        assert!(weights.iter().all(|w| *w > 0.0 && w.is_finite()), "metric weights must be positive");
        Self { weights: Some(weights) }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    #[inline]
    fn sq(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.weights {
            None => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Some(w) => a
                .iter()
                .zip(b)
                .zip(w)
                .map(|((x, y), w)| {
                    let d = (x - y) * w;
                    d * d
                })
                .sum(),
        }
    }

    #[inline]
    fn axis_sq(&self, dim: usize, diff: f64) -> f64 {
        let d = match &self.weights {
            None => diff,
            Some(w) => diff * w[dim],
        };
        d * d
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// KNN distance of one query and the density it implies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityEstimate {
    pub distance: f64,
    /// `1 / (distance + c0)`.
    pub density: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BufferOptions {
    /// Standardise each coordinate by the buffer's running std before measuring distances.
    pub normalize: bool,
    /// Keep a uniform reservoir sample of at most this many points.
    pub capacity: Option<usize>,
    /// Seed of the reservoir sampler.
    pub seed: u64,
}

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { lo: usize, hi: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Exact k-d tree over the contiguous member range `[start, end)`.
#[derive(Clone, Debug)]
struct KdTree {
    start: usize,
    end: usize,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    fn build(points: &[f64], dim: usize, start: usize, end: usize) -> Self {
        let mut t = KdTree { start, end, perm: (start..end).collect(), nodes: Vec::new() };
        if end > start {
            t.build_node(points, dim, 0, end - start);
        }
        t
    }

    fn build_node(&mut self, points: &[f64], dim: usize, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        if hi - lo <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { lo, hi });
            return id;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for d in 0..dim {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.perm[lo..hi] {
                let v = points[i * dim + d];
                mn = mn.min(v);
                mx = mx.max(v);
            }
            if mx - mn > best.1 {
                best = (d, mx - mn);
            }
        }
        let d = best.0;
        let mid = lo + (hi - lo) / 2;
        let key = |i: &usize| (points[i * dim + d], *i);
        self.perm[lo..hi].select_nth_unstable_by(mid - lo, |a, b| {
            let (x, y) = (key(a), key(b));
            x.0.total_cmp(&y.0).then(x.1.cmp(&y.1))
        });
        let value = points[self.perm[mid] * dim + d];
        self.nodes.push(Node::Leaf { lo: 0, hi: 0 });
        let left = self.build_node(points, dim, lo, mid);
        let right = self.build_node(points, dim, mid, hi);
        self.nodes[id] = Node::Split { dim: d, value, left, right };
        id
    }

    fn search(&self, points: &[f64], dim: usize, q: &[f64], metric: &Metric, best: &mut Best) {
        if !self.nodes.is_empty() {
            self.search_node(0, points, dim, q, metric, best);
        }
    }

    fn search_node(&self, id: usize, points: &[f64], dim: usize, q: &[f64], metric: &Metric, best: &mut Best) {
        match self.nodes[id] {
            Node::Leaf { lo, hi } => {
                for &i in &self.perm[lo..hi] {
                    if Some(i) != best.exclude {
                        best.offer(metric.sq(q, &points[i * dim..(i + 1) * dim]), i);
                    }
                }
            }
            Node::Split { dim: d, value, left, right } => {
                let diff = q[d] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_node(near, points, dim, q, metric, best);
                if !best.full() || metric.axis_sq(d, diff) <= best.worst() {
                    self.search_node(far, points, dim, q, metric, best);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// The K smallest `(squared distance, index)` pairs seen so far.
struct Best {
    k: usize,
    exclude: Option<usize>,
    heap: BinaryHeap<Candidate>,
}

impl Best {
    fn new(k: usize, exclude: Option<usize>) -> Self {
        Self { k, exclude, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn full(&self) -> bool {
        self.heap.len() >= self.k
    }

    fn worst(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |c| c.0)
    }

    #[inline]
    fn offer(&mut self, sq: f64, i: usize) {
        let c = Candidate(sq, i);
        if !self.full() {
            self.heap.push(c);
        } else if c < *self.heap.peek().expect("full heap") {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn kth(&self) -> Candidate {
        *self.heap.peek().expect("non-empty")
    }
}

/// Union replay buffer of visited states with exact KNN queries.
#[derive(Clone, Debug)]
pub struct CoverBuffer {
    dim: usize,
    points: Vec<f64>,
    tags: Vec<u64>,
    seq: Vec<u64>,
    trees: Vec<KdTree>,
    stats: Vec<Welford>,
    options: BufferOptions,
    inserted: u64,
    reservoir: rng::Rng,
}

impl CoverBuffer {
    pub fn new(dim: usize, options: BufferOptions) -> Self {
        let reservoir = rng::stream(options.seed, rng::STREAM_BUFFER);
        Self {
            dim,
            points: Vec::new(),
            tags: Vec::new(),
            seq: Vec::new(),
            trees: Vec::new(),
            stats: vec![Welford::default(); dim],
            options,
            inserted: 0,
            reservoir,
        }
    }

    /// Unbounded, unnormalised buffer holding `states`, all tagged iteration 0.
    pub fn from_states(dim: usize, states: &[Vec<f64>]) -> Self {
        let mut b = Self::new(dim, BufferOptions::default());
        b.insert_batch(states, 0);
        b
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Total number of states ever offered, including those the reservoir dropped.
    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tag(&self, i: usize) -> u64 {
        self.tags[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim.max(1)).take(self.len())
    }

    /// Per-dimension running mean and population std over every state ever inserted.
    pub fn running_stats(&self) -> Vec<(f64, f64)> {
        self.stats.iter().map(|w| (w.mean(), w.std())).collect()
    }

    /// The metric queries should use: standardised by the running std when enabled.
    pub fn metric(&self) -> Metric {
        if !self.options.normalize || self.inserted == 0 {
            return Metric::euclidean();
        }
        Metric::weighted(self.stats.iter().map(|w| if w.std() > 1e-12 { 1.0 / w.std() } else { 1.0 }).collect())
    }

    /// Appends a batch tagged with `iteration`; returns each state's member index, or
    /// `None` where the reservoir dropped it (capped buffers only).
    ///
    /// Panics if a state has the wrong dimension or a tag decreases.
    pub fn insert_batch(&mut self, states: &[Vec<f64>], iteration: u64) -> Vec<Option<usize>> {
        assert!(self.tags.last().is_none_or(|t| *t <= iteration), "iteration tags must not decrease");
        let start = self.len();
        let mut slots = Vec::with_capacity(states.len());
        let mut replaced = false;
        let mut owner = std::collections::HashMap::new();
        for (b, s) in states.iter().enumerate() {
            assert_eq!(s.len(), self.dim, "state dimension");
            for (w, x) in self.stats.iter_mut().zip(s) {
                w.push(*x);
            }
            let seq = self.inserted;
            self.inserted += 1;
            match self.options.capacity {
                Some(cap) if self.len() >= cap => {
                    let j = self.reservoir.random_range(0..self.inserted) as usize;
                    if j < cap {
                        self.points[j * self.dim..(j + 1) * self.dim].copy_from_slice(s);
                        self.tags[j] = iteration;
                        self.seq[j] = seq;
                        replaced = true;
                        if let Some(prev) = owner.insert(j, b) {
                            slots[prev] = None;
                        }
                        slots.push(Some(j));
                    } else {
                        slots.push(None);
                    }
                }
                _ => {
                    self.points.extend_from_slice(s);
                    self.tags.push(iteration);
                    self.seq.push(seq);
                    slots.push(Some(self.len() - 1));
                }
            }
        }
        if replaced {
            self.restore_insertion_order(&mut slots);
            self.trees = vec![KdTree::build(&self.points, self.dim, 0, self.len())];
        } else if self.len() > start {
            self.trees.push(KdTree::build(&self.points, self.dim, start, self.len()));
            while self.trees.len() >= 2 {
                let n = self.trees.len();
                let (a, b) = (&self.trees[n - 2], &self.trees[n - 1]);
                if a.end - a.start > 2 * (b.end - b.start) {
                    break;
                }
                let merged = KdTree::build(&self.points, self.dim, a.start, b.end);
                self.trees.truncate(n - 2);
                self.trees.push(merged);
            }
        }
        slots
    }

    /// Re-sorts members by insertion sequence after reservoir replacement.
    fn restore_insertion_order(&mut self, slots: &mut [Option<usize>]) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.seq[i]);
        let mut new_pos = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_pos[old] = new;
        }
        let d = self.dim;
        self.points = order.iter().flat_map(|&i| self.points[i * d..(i + 1) * d].to_vec()).collect();
        self.tags = order.iter().map(|&i| self.tags[i]).collect();
        self.seq = order.iter().map(|&i| self.seq[i]).collect();
        for s in slots.iter_mut().flatten() {
            *s = new_pos[*s];
        }
    }

    fn resolve<'a>(&'a self, q: Query<'a>) -> Result<(&'a [f64], Option<usize>), DensityError> {
        match q {
            Query::Member(i) if i < self.len() => Ok((self.point(i), Some(i))),
            Query::Member(i) => Err(DensityError::NoSuchMember { index: i, len: self.len() }),
            Query::External(p) if p.len() == self.dim => Ok((p, None)),
            Query::External(p) => Err(DensityError::DimensionMismatch { expected: self.dim, got: p.len() }),
        }
    }

    fn check_k(&self, k: usize, exclude: Option<usize>) -> Result<(), DensityError> {
        if k == 0 {
            return Err(DensityError::ZeroK);
        }
        let available = self.len() - exclude.is_some() as usize;
        if available < k {
            return Err(DensityError::InsufficientPoints { needed: k, available });
        }
        Ok(())
    }

    /// The K-th nearest eligible member.
    pub fn knn(&self, query: Query<'_>, k: usize, metric: &Metric) -> Result<Neighbor, DensityError> {
        let (q, exclude) = self.resolve(query)?;
        self.check_k(k, exclude)?;
        let mut best = Best::new(k, exclude);
        for t in &self.trees {
            t.search(&self.points, self.dim, q, metric, &mut best);
        }
        let c = best.kth();
        Ok(Neighbor { index: c.1, distance: c.0.sqrt() })
    }

    /// Reference implementation of [`CoverBuffer::knn`] by full scan.
    pub fn knn_exhaustive(&self, query: Query<'_>, k: usize, metric: &Metric) -> Result<Neighbor, DensityError> {
        let (q, exclude) = self.resolve(query)?;
        self.check_k(k, exclude)?;
        let mut all: Vec<Candidate> = (0..self.len())
            .filter(|i| Some(*i) != exclude)
            .map(|i| Candidate(metric.sq(q, self.point(i)), i))
            .collect();
        all.sort();
        let c = all[k - 1];
        Ok(Neighbor { index: c.1, distance: c.0.sqrt() })
    }
}

/// `density = 1 / (knn distance + c0)` for each query.
pub fn estimate_density(
    buffer: &CoverBuffer,
    queries: &[Query<'_>],
    k: usize,
    c0: f64,
    metric: &Metric,
) -> Result<Vec<DensityEstimate>, DensityError> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(DensityError::BadOffset(c0));
    }
    queries
        .iter()
        .map(|q| {
            let distance = buffer.knn(*q, k, metric)?.distance;
            Ok(DensityEstimate { distance, density: 1.0 / (distance + c0) })
        })
        .collect()
}

/// Mean over members of `ln(knn distance + c0)`, a proxy monotone in differential entropy.
pub fn entropy_estimate(buffer: &CoverBuffer, k: usize, c0: f64, metric: &Metric) -> Result<f64, DensityError> {
    let members: Vec<usize> = (0..buffer.len()).collect();
    entropy_over(buffer, &members, k, c0, metric)
}

/// [`entropy_estimate`] over a uniform sample of at most `sample` members.
pub fn entropy_estimate_sampled(
    buffer: &CoverBuffer,
    k: usize,
    c0: f64,
    metric: &Metric,
    sample: usize,
    rng: &mut impl rand::Rng,
) -> Result<f64, DensityError> {
    if buffer.len() <= sample {
        return entropy_estimate(buffer, k, c0, metric);
    }
    let members = rand::seq::index::sample(rng, buffer.len(), sample).into_vec();
    entropy_over(buffer, &members, k, c0, metric)
}

fn entropy_over(buffer: &CoverBuffer, members: &[usize], k: usize, c0: f64, metric: &Metric) -> Result<f64, DensityError> {
    if buffer.len() < k + 1 {
        return Err(DensityError::InsufficientPoints { needed: k + 1, available: buffer.len() });
    }
    let mut sum = 0.0;
    for &i in members {
        sum += (buffer.knn(Query::Member(i), k, metric)?.distance + c0).ln();
    }
    Ok(sum / members.len() as f64)
}
