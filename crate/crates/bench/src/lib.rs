//! Criterion benchmarks for the speechstyle crates; see `benches/`.
