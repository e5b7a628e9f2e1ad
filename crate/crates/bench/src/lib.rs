//! Criterion benchmarks for the KNN index and the policy network; see `benches/`.
