//! One-step and K-step evaluation, the failure threshold sweep and the
//! simulator-vs-surrogate timing benchmark.

mod bench;
mod metrics;
mod predictor;
mod rollout;

pub use bench::{bench_compare, BenchReport, MachineInfo};
pub use metrics::{
    failure_threshold_table, kstep_eval, one_step_eval, EvalKind, EvalReport, MetricTriple, QuantityMetrics,
    ThresholdRow, VoltageTrace, DEFAULT_THRESHOLDS,
};
pub use predictor::{Predictor, ReplayOracle};
pub use rollout::{rollout, rollout_with, Rollout, RolloutStart, FAILURE_DECISION};
