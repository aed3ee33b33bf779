//! Criterion benchmarks for the scan-conversion and network hot paths; see
//! `benches/`.
