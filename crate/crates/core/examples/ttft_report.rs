//! Compares two runs and writes the report document consumed by plotting
//! scripts: percentiles, CDF and per-shard footprint.
//!
//! cargo run --release --example ttft_report -- [report.json]

use reckv::config::Config;
use reckv::engine::EngineMode;
use reckv::pipeline::{
    build_placement, build_semlib, compare_runs, report, run_simulation, synthesize, write_json, SimOverrides,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let data = synthesize(&cfg)?;
    let plan = build_placement(&cfg, &data, false)?;
    let lib = build_semlib(&cfg, &data)?;
    let sim = |mode| {
        let ov = SimOverrides {
            mode: Some(mode),
            ..SimOverrides::default()
        };
        run_simulation(&cfg, &data, &plan, Some(&lib), &ov, None)
    };
    let rcllm = sim(EngineMode::RcLlm)?;
    let prefix = sim(EngineMode::PrefixCache)?;

    let c = compare_runs(&rcllm, &prefix)?;
    println!("{} vs {}", c.candidate, c.baseline);
    println!(
        "  speedup P50 {:.2}x  P90 {:.2}x  P99 {:.2}x  mean {:.2}x",
        c.speedup.p50, c.speedup.p90, c.speedup.p99, c.speedup.mean
    );
    println!("  faster or equal on every request: {} ({} exceptions)", c.dominates, c.violations);

    let r = report(Some(&rcllm), Some(&plan), Some(&prefix), 20)?;
    if let Some(cdf) = &r.cdf {
        for p in cdf.points.iter().step_by(4) {
            println!("  {:>4.0}% of requests within {:>6.1}ms", 100.0 * p.fraction, 1e3 * p.ttft);
        }
    }
    if let Some(path) = std::env::args().nth(1) {
        write_json(std::path::Path::new(&path), &r)?;
        println!("wrote {path}");
    }
    Ok(())
}
