//! Criterion benchmarks for the risk-bound solvers, the certificate network
//! and the loss sweep. Run with `cargo bench -p certsynth-bench`.
