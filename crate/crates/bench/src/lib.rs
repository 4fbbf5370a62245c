//! Criterion benchmarks for the `pedcross` hot paths; see `benches/`.
