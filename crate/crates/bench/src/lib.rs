//! Shared fixtures for the benchmarks in `benches/`.

use ppsync_core::{scenario_example2, Digraph, Scenario};

/// Bidirectional ring of `n` agents with the first one pinned.
pub fn ring(n: usize) -> Digraph {
    let mut pinning = vec![0.0; n];
    pinning[0] = 1.0;
    Digraph::bidirectional_ring(n, &pinning).expect("ring is valid")
}

/// The `example2` scenario cut down to `horizon` seconds.
pub fn short_example2(horizon: f64) -> Scenario {
    let mut sc = scenario_example2();
    sc.horizon = horizon;
    sc.record_every = 100;
    sc
}
