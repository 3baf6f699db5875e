//! Offline item-KV placement: popularity heat, global replication of hot
//! items, a co-occurrence graph over cold items, a multilevel k-way
//! partitioner and per-shard footprint accounting.

mod graph;
mod heat;
mod partition;
mod plan;

pub use graph::{build_similarity_graph, CsrGraph, ItemGraph, ReplicaNode};
pub use heat::{compute_heat, split_hot_cold, HeatMap, HotCold, UsageCorpus};
pub use partition::{kway_partition, part_sizes, KwayPartition, PartitionConfig};
pub use plan::{
    footprint, load_plan, place_items, place_with_heat, random_placement, read_plan,
    refresh_placement, save_plan, write_plan, Assignment, CatalogAssignment, ItemMove,
    PlacementPlan, PlanDiff, PlanItem, ShardFootprint,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlacementError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot split {nodes} cold items into {k} shards")]
    TooFewNodes { k: usize, nodes: usize },
    #[error("balance constraint infeasible even at eps={eps}")]
    Infeasible { eps: f64 },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}
