//! Runs the whole offline and online pipeline from a config file and leaves
//! every artifact in a directory, the same files the `reckv` binary writes.
//!
//! cargo run --release --example end_to_end -- [crates/core/configs/default.toml] [out_dir]

use std::path::PathBuf;

use reckv::config::Config;
use reckv::engine::{save_run, EngineMode};
use reckv::pipeline::{
    build_placement, build_semlib, compare_runs, report, run_simulation, save_dataset, synthesize, write_json,
    SimOverrides,
};
use reckv::placement::save_plan;
use reckv::semlib::save_library;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "reckv-out".into()));

    let data = synthesize(&cfg)?;
    save_dataset(&out.join("data"), &data)?;
    let plan = build_placement(&cfg, &data, false)?;
    save_plan(out.join("plan.json"), &plan)?;
    let lib = build_semlib(&cfg, &data)?;
    save_library(out.join("semlib.jsonl"), &lib)?;

    let mut runs = Vec::new();
    for mode in [EngineMode::RcLlm, EngineMode::PrefixCache] {
        let ov = SimOverrides {
            mode: Some(mode),
            ..SimOverrides::default()
        };
        let run = run_simulation(&cfg, &data, &plan, Some(&lib), &ov, None)?;
        save_run(out.join(format!("{}.jsonl", mode.label())), &run)?;
        runs.push(run);
    }
    let c = compare_runs(&runs[0], &runs[1])?;
    write_json(&out.join("compare.json"), &c)?;
    write_json(&out.join("report.json"), &report(Some(&runs[0]), Some(&plan), Some(&runs[1]), 100)?)?;
    println!(
        "{} requests, P50 speedup {:.2}x, P99 speedup {:.2}x; artifacts in {}",
        c.n_requests,
        c.speedup.p50,
        c.speedup.p99,
        out.display()
    );
    Ok(())
}
