//! Criterion benchmarks for profile construction, the Oseen kernel and the
//! two solvers. Run with `cargo bench -p decaylab-bench`.
