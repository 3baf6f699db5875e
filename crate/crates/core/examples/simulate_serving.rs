//! Serves one trace three ways (beyond-prefix reuse, prefix caching, full
//! recompute) and breaks a typical prompt down by how each token is served.
//!
//! cargo run --release --example simulate_serving

use reckv::config::Config;
use reckv::engine::EngineMode;
use reckv::metrics::percentiles;
use reckv::pipeline::{build_placement, build_semlib, run_simulation, synthesize, SimOverrides};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let data = synthesize(&cfg)?;
    let plan = build_placement(&cfg, &data, false)?;
    let lib = build_semlib(&cfg, &data)?;

    for mode in [EngineMode::RcLlm, EngineMode::PrefixCache, EngineMode::FullRecompute] {
        let ov = SimOverrides {
            mode: Some(mode),
            ..SimOverrides::default()
        };
        let run = run_simulation(&cfg, &data, &plan, Some(&lib), &ov, None)?;
        let p = percentiles(&run.records)?;
        let reused: u64 = run.records.iter().map(|r| r.breakdown.reused_tokens()).sum();
        let total: u64 = run.records.iter().map(|r| r.breakdown.total_tokens).sum();
        println!(
            "{:<15} P50 {:>6.1}ms  P90 {:>6.1}ms  P99 {:>6.1}ms  reused {:>5.1}%",
            mode.label(),
            1e3 * p.p50,
            1e3 * p.p90,
            1e3 * p.p99,
            100.0 * reused as f64 / total as f64
        );
        if mode == EngineMode::RcLlm {
            let b = &run.records[run.records.len() / 2].breakdown;
            println!("  one prompt of {} tokens:", b.total_tokens);
            println!("    instruction        {}", b.instruction_tokens);
            println!("    items hit / miss   {} / {}", b.item_hit_tokens, b.item_miss_tokens);
            println!(
                "    history matched / unmatched  {} / {}",
                b.history_matched_tokens, b.history_unmatched_tokens
            );
            println!("    heavy hitters      {}", b.heavy_hitter_tokens);
            println!("    window             {}", b.window_tokens);
            println!("    recomputed         {}", b.recomputed_tokens());
        }
    }
    Ok(())
}
