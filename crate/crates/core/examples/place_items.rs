//! Similarity-aware placement against seeded random placement across
//! cluster sizes: candidate hit ratio on the best node, edge cut and
//! per-shard footprint.
//!
//! cargo run --release --example place_items

use reckv::config::Config;
use reckv::pipeline::{build_placement, synthesize};
use reckv::placement::footprint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::default();
    let data = synthesize(&cfg)?;
    let candidates: Vec<Vec<usize>> = data
        .trace
        .requests
        .iter()
        .map(|r| r.candidates.iter().filter_map(|c| data.catalog.index_of(c)).collect())
        .collect();
    let mean_hit = |plan: &reckv::placement::PlacementPlan| {
        let a = plan.for_catalog(&data.catalog);
        candidates.iter().map(|c| a.best_hit_ratio(c)).sum::<f64>() / candidates.len() as f64
    };

    println!("{:>4} {:>10} {:>10} {:>10} {:>12}", "K", "hit", "random", "edge cut", "max shard");
    for k in [20, 40, 80, 100] {
        cfg.placement.k = k;
        let plan = build_placement(&cfg, &data, false)?;
        let random = build_placement(&cfg, &data, true)?;
        let fp = footprint(&plan, cfg.placement.kv_bytes_per_token);
        let max = fp.iter().map(|f| f.bytes).max().unwrap_or(0);
        println!(
            "{k:>4} {:>10.3} {:>10.3} {:>10} {:>9.2} GB",
            mean_hit(&plan),
            mean_hit(&random),
            plan.edge_cut,
            max as f64 / 1e9
        );
    }
    Ok(())
}
