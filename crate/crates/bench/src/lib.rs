//! Benchmarks for the geometry kernels and caption metrics; see `benches/`.
