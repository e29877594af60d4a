//! Criterion benchmarks for the churnforge kernels live under `benches/`.
