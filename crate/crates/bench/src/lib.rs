//! Criterion benchmarks for the SegET kernels; see `benches/`.
