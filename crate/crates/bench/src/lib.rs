//! Benchmarks live in `benches/`; run them with `cargo bench -p clt-lab-bench`.
