//! Builds the prototype library from the review corpus and measures how
//! much of an unseen review stream it covers.
//!
//! cargo run --release --example semantic_library

use reckv::config::Config;
use reckv::semlib::{build_library, match_rate_reviews, Embedder};
use reckv::workload::Synthesizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let synth = Synthesizer::new(cfg.workload.clone(), cfg.seed)?;
    let corpus = synth.corpus();
    let emb = Embedder::new(cfg.semlib.embedding.clone())?;
    let lib = build_library(&corpus, cfg.semlib.budget, &emb, &cfg.semlib.lsh)?;
    println!(
        "{} prototypes from {} corpus tokens, {:.2} GB of KV on every node",
        lib.len(),
        corpus.total_tokens(),
        lib.bytes(cfg.placement.kv_bytes_per_token) as f64 / 1e9
    );

    let held = synth.heldout_reviews(2_000);
    println!("held-out tokens from the shared vocabulary: {:.3}", held.shared_token_fraction);
    for threshold in [0.8, 0.9, 0.95, 0.99] {
        let rate = match_rate_reviews(
            held.corpus.reviews.iter().map(|r| r.token_ids.as_slice()),
            &lib,
            &emb,
            threshold,
        )?;
        println!("  match rate at cosine >= {threshold}: {rate:.3}");
    }

    let index = lib.index();
    let mut agree = 0;
    let mut n = 0;
    for r in held.corpus.reviews.iter().take(40) {
        for (pos, &t) in r.token_ids.iter().enumerate() {
            let q = emb.embed(t, pos as u32)?;
            let (_, lsh) = index.nearest(&q, emb.config().bucket(pos as u32)).expect("library is not empty");
            let (_, exact) = index.exact_nearest(&q).expect("library is not empty");
            agree += (lsh == exact) as usize;
            n += 1;
        }
    }
    println!("LSH finds the exact nearest prototype for {agree}/{n} tokens");
    Ok(())
}
