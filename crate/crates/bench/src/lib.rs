//! Criterion benchmarks for `matchlab-core`; the harness lives in `benches/`.
