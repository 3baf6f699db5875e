//! Per-instance prefill execution: token classification into reused and
//! recomputed sets, the importance scorer, RoPE realignment, the latency
//! model and the discrete-event loop that produces per-request TTFT.

mod breakdown;
mod cost;
mod math;
mod sim;

pub use breakdown::{
    classify_tokens, synthetic_scores, EngineMode, NodeContext, RecomputeBreakdown, RecomputePolicy,
};
pub use cost::{prefill_latency, CostModel};
pub use math::{
    heavy_hitter_count, importance_scores, rope_encode, rope_realign, select_heavy_hitters,
    top_k_mask, DEFAULT_ROPE_BASE,
};
pub use sim::{
    load_run, read_run, replay, save_run, simulate, write_run, EngineConfig, HistoryMatches, Run,
    RunMeta, RunRecord, SimInput,
};

use thiserror::Error;

use crate::placement::PlacementError;
use crate::scheduler::SchedulerError;
use crate::semlib::SemlibError;
use crate::workload::WorkloadError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rotary embedding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Semlib(#[from] SemlibError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}
