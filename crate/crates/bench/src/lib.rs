//! Criterion benchmarks for the planner, environment and training loop; see `benches/`.
