//! Simulator for beyond-prefix KV-cache reuse in generative-recommendation
//! serving: synthetic workloads, offline item placement, a semantic history
//! library, cache-affinity routing and a discrete-event prefill engine.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod pipeline;
pub mod placement;
pub mod scheduler;
pub mod semlib;
pub mod workload;
