//! Deterministic simulation of fully replicated shared memory under four
//! consistency models — linearizability, sequential consistency, causal+
//! and eventual — with model-specific marker-based checkpointing,
//! whole-system rollback, and post-hoc history checkers.

pub mod checker;
pub mod checkpoint;
pub mod engine;
pub mod harness;
pub mod net;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod types;

pub use checker::{
    check_causal_plus, check_convergence, check_eventual, check_exactly_once,
    check_linearizable, check_sequential, default_max_ops, History, Verdict,
};
pub use checkpoint::{
    cost_report, load_checkpoint, save_checkpoint, CheckpointCostReport, CheckpointRecord,
    CheckpointStore,
};
pub use engine::{apply_if_newer, Client, Effect, EngineKind, Replica};
pub use harness::{
    check_trace, compare_costs, history_from_trace, rollback_restart, run_scenario, sweep,
    with_calibrated_faults, CostRow, HarnessError, RunReport, SweepSummary,
};
pub use net::Network;
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{SimConfig, Simulator};
pub use trace::{Trace, TraceEvent, TraceKind};
pub use types::*;
