#![allow(dead_code)]

use reckv::config::Config;
use reckv::placement::PartitionConfig;
use reckv::workload::SynthConfig;

/// A few hundred requests over a 2K-item catalog; fast enough for property
/// tests and CLI round trips.
pub fn small_workload() -> SynthConfig {
    SynthConfig {
        n_items: 2_000,
        n_users: 300,
        n_requests: 400,
        n_clusters: 40,
        ..SynthConfig::default()
    }
}

pub fn small_config() -> Config {
    Config {
        workload: small_workload(),
        placement: PartitionConfig::with_k(8),
        ..Config::default()
    }
}
