//! Generates a clustered catalog, review corpus and request trace, prints
//! the shape of the workload and optionally writes it to a directory.
//!
//! cargo run --release --example synth_workload -- [out_dir]

use reckv::config::Config;
use reckv::pipeline::{save_dataset, synthesize};
use reckv::workload::decompose_prompt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let data = synthesize(&cfg)?;

    let mut prompt: Vec<u64> = data
        .trace
        .requests
        .iter()
        .map(|r| decompose_prompt(r, &data.catalog, r.instruction_tokens).map(|l| l.total_tokens()))
        .collect::<Result<_, _>>()?;
    prompt.sort_unstable();

    let mut counts = std::collections::HashMap::<&str, u64>::new();
    for r in &data.trace.requests {
        for c in &r.candidates {
            *counts.entry(c.as_str()).or_default() += 1;
        }
    }
    let mut by_count: Vec<u64> = counts.into_values().collect();
    by_count.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = by_count.iter().sum();
    let top = data.catalog.len() / 100;

    println!("items           {}", data.catalog.len());
    println!("catalog tokens  {}", data.catalog.total_tokens());
    println!("reviews         {}", data.reviews.len());
    println!("requests        {} at {} qps", data.trace.len(), data.trace.meta.qps);
    println!(
        "prompt tokens   p10 {} / median {} / p90 {}",
        prompt[prompt.len() / 10],
        prompt[prompt.len() / 2],
        prompt[prompt.len() * 9 / 10]
    );
    println!(
        "top 1% of items hold {:.1}% of candidate slots",
        100.0 * by_count.iter().take(top).sum::<u64>() as f64 / total as f64
    );

    if let Some(dir) = std::env::args().nth(1) {
        save_dataset(std::path::Path::new(&dir), &data)?;
        println!("wrote {dir}");
    }
    Ok(())
}
