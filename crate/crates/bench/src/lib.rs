//! Criterion benchmarks for the harness kernels live in `benches/`.
