//! Numeric kernels: heavy-hitter importance scores, top-k selection with a
//! sliding window, and rotary position realignment.

use super::EngineError;

/// Per-token importance: `(1 - lambda) * |A_i|_1 + lambda * (|K_new_i -
/// K_cached_i|_1 + |V_new_i - V_cached_i|_1)`. All inputs are token-major.
pub fn importance_scores(
    attn: &[Vec<f64>],
    k_new: &[Vec<f64>],
    k_cached: &[Vec<f64>],
    v_new: &[Vec<f64>],
    v_cached: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<f64>, EngineError> {
    let n = attn.len();
    for (name, m) in [("k_new", k_new), ("k_cached", k_cached), ("v_new", v_new), ("v_cached", v_cached)] {
        if m.len() != n {
            return Err(EngineError::DimensionMismatch(format!(
                "{name} has {} rows, attention has {n}",
                m.len()
            )));
        }
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(EngineError::InvalidConfig(format!("lambda {lambda} outside [0, 1]")));
    }
    let l1_diff = |a: &[f64], b: &[f64], what: &str| -> Result<f64, EngineError> {
        if a.len() != b.len() {
            return Err(EngineError::DimensionMismatch(format!(
                "{what} rows have widths {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
    };
    (0..n)
        .map(|i| {
            let structural: f64 = attn[i].iter().map(|x| x.abs()).sum();
            let drift = l1_diff(&k_new[i], &k_cached[i], "K")? + l1_diff(&v_new[i], &v_cached[i], "V")?;
            Ok((1.0 - lambda) * structural + lambda * drift)
        })
        .collect()
}

/// `ceil(r * n)`, robust to `r * n` landing a hair above an integer.
pub fn heavy_hitter_count(r: f64, n: usize) -> usize {
    (((r * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Top `ceil(r * n)` indices by score (ties to the lower index) together
/// with the last `window` indices. Returned in ascending order.
pub fn select_heavy_hitters(scores: &[f64], r: f64, window: usize) -> Vec<usize> {
    let n = scores.len();
    let mut chosen = top_k_mask(scores, heavy_hitter_count(r, n));
    for c in chosen.iter_mut().skip(n.saturating_sub(window)) {
        *c = true;
    }
    (0..n).filter(|&i| chosen[i]).collect()
}

/// Membership mask of the `k` highest scores, ties to the lower index.
pub fn top_k_mask(scores: &[f64], k: usize) -> Vec<bool> {
    let n = scores.len();
    let mut mask = vec![false; n];
    if k == 0 {
        return mask;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < n {
        idx.select_nth_unstable_by(k - 1, cmp);
    }
    for &i in &idx[..k.min(n)] {
        mask[i] = true;
    }
    mask
}

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

fn check_even(d: usize) -> Result<(), EngineError> {
    if d % 2 == 1 {
        return Err(EngineError::OddDimension(d));
    }
    Ok(())
}

fn rotate(v: &[f64], angle_scale: f64, base: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for i in 0..d / 2 {
        let theta = angle_scale * base.powf(-2.0 * i as f64 / d as f64);
        let (s, c) = theta.sin_cos();
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = x * c - y * s;
        out[2 * i + 1] = x * s + y * c;
    }
    out
}

/// Rotary encoding of a raw vector at absolute position `pos`.
pub fn rope_encode(v: &[f64], pos: f64, base: f64) -> Result<Vec<f64>, EngineError> {
    check_even(v.len())?;
    Ok(rotate(v, pos, base))
}

/// Moves a block of rotary-encoded keys whose first token sat at `old_pos`
/// so that it starts at `new_pos`. Token j moves from `old_pos + j` to
/// `new_pos + j`, a shift shared by the whole block.
pub fn rope_realign(
    block: &[Vec<f64>],
    old_pos: u64,
    new_pos: u64,
    base: f64,
) -> Result<Vec<Vec<f64>>, EngineError> {
    let shift = new_pos as f64 - old_pos as f64;
    block
        .iter()
        .map(|v| {
            check_even(v.len())?;
            Ok(rotate(v, shift, base))
        })
        .collect()
}
