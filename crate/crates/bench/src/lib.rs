//! Shared fixtures for the benchmarks.

use dsmsim::Scenario;

/// A causal+ workload with concurrent writers, a mid-run checkpoint and a
/// crash, sized so one run exercises every subsystem.
pub fn causal_crash_scenario(seed: u64) -> Scenario {
    serde_json::from_value(serde_json::json!({
        "model": "causal+",
        "n": 4,
        "programs": [
            ["W x 1", "R y", "W x 2", "R z"],
            ["W y 3", "R x", "W y 4"],
            ["W z 5", "R x", "W z 6"],
            ["R x", "R y", "W x 7"]
        ],
        "seed": seed,
        "checkpoint_at": [30],
        "crash_at": 60
    }))
    .expect("fixture scenario is valid")
}
