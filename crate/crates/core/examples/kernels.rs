//! The numeric pieces behind selective recomputation: importance scores,
//! heavy-hitter selection with a trailing window, and rotary realignment of
//! a cached block moved to a new prompt offset.
//!
//! cargo run --example kernels

use reckv::engine::{importance_scores, rope_encode, rope_realign, select_heavy_hitters, DEFAULT_ROPE_BASE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Four tokens with two-wide K/V rows; token 2 drifted the most.
    let attn = vec![vec![0.1, 0.0, 0.2, 0.1], vec![0.3, 0.1, 0.0, 0.0], vec![0.0, 0.2, 0.1, 0.0], vec![0.1, 0.1, 0.1, 0.1]];
    let k_cached = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0], vec![0.2, 0.2]];
    let k_new = vec![vec![1.0, 0.1], vec![0.5, 0.4], vec![0.9, 0.1], vec![0.2, 0.3]];
    let v_cached = k_cached.clone();
    let v_new = vec![vec![1.0, 0.0], vec![0.6, 0.5], vec![0.7, 0.2], vec![0.2, 0.2]];
    for lambda in [0.0, 0.5, 1.0] {
        let s = importance_scores(&attn, &k_new, &k_cached, &v_new, &v_cached, lambda)?;
        let chosen = select_heavy_hitters(&s, 0.25, 1);
        println!("lambda {lambda}: scores {s:.3?} -> recompute {chosen:?}");
    }

    let key: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let cached = rope_encode(&key, 300.0, DEFAULT_ROPE_BASE)?;
    let moved = rope_realign(&[cached], 300, 1_250, DEFAULT_ROPE_BASE)?;
    let direct = rope_encode(&key, 1_250.0, DEFAULT_ROPE_BASE)?;
    let err = moved[0].iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("block moved from 300 to 1250: max deviation from encoding in place {err:.1e}");
    Ok(())
}
