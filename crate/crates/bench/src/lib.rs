//! Criterion benchmarks for the helevel pipeline; see `benches/pipeline.rs`.
