//! Criterion benchmarks for the hot paths of `avgen-core`; see `benches/`.
