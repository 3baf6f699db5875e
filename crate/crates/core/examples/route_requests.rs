//! Routing policies under rising load: mean TTFT for affinity routing and
//! its two single-signal variants as the arrival rate is scaled up.
//!
//! cargo run --release --example route_requests

use reckv::config::Config;
use reckv::engine::{simulate, HistoryMatches, SimInput};
use reckv::pipeline::{build_placement, build_semlib, synthesize};
use reckv::scheduler::Policy;
use reckv::semlib::Embedder;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let data = synthesize(&cfg)?;
    let assignment = build_placement(&cfg, &data, false)?.for_catalog(&data.catalog);
    let lib = build_semlib(&cfg, &data)?;
    let emb = Embedder::new(lib.embedding().clone())?;
    let matches = HistoryMatches::compute(&data.trace, &lib, &emb)?;
    let engine = cfg.engine_config();

    let policies = [
        Policy::Affinity { alpha: 0.7, beta: 0.3 },
        Policy::HitOnly,
        Policy::LoadOnly,
        Policy::LeastLoaded,
        Policy::RoundRobin,
    ];
    print!("{:>6}", "qps");
    for p in &policies {
        print!(" {:>16}", p.label());
    }
    println!();
    for scale in [1.0, 2.0, 4.0, 8.0] {
        let trace = data.trace.with_rate_scaled(scale);
        let input = SimInput {
            trace: &trace,
            catalog: &data.catalog,
            assignment: &assignment,
            history: Some(&matches),
        };
        print!("{:>6}", trace.meta.qps);
        for p in policies {
            let run = simulate(input, p, &engine)?;
            let mean = run.records.iter().map(|r| r.ttft).sum::<f64>() / run.records.len() as f64;
            print!(" {:>14.1}ms", 1e3 * mean);
        }
        println!();
    }
    Ok(())
}
