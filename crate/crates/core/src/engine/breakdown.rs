use rand::Rng;
use rand_distr::Pareto;
use serde::{Deserialize, Serialize};

use super::math::top_k_mask;
use super::math::heavy_hitter_count;
use super::EngineError;
use crate::placement::{Assignment, CatalogAssignment};
use crate::workload::{PromptLayout, SegmentRole, SegmentSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    #[serde(rename = "rcllm")]
    RcLlm,
    FullRecompute,
    PrefixCache,
}

impl EngineMode {
    pub fn label(self) -> &'static str {
        match self {
            EngineMode::RcLlm => "rcllm",
            EngineMode::FullRecompute => "full_recompute",
            EngineMode::PrefixCache => "prefix_cache",
        }
    }

    pub fn parse(text: &str) -> Result<Self, EngineError> {
        match text.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rcllm" => Ok(EngineMode::RcLlm),
            "full_recompute" | "full" => Ok(EngineMode::FullRecompute),
            "prefix_cache" | "prefix" => Ok(EngineMode::PrefixCache),
            _ => Err(EngineError::InvalidConfig(format!("unknown engine mode {text}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecomputePolicy {
    pub r_rev: f64,
    pub r_item: f64,
    pub lambda: f64,
    /// Trailing reused tokens always recomputed.
    pub window: usize,
    /// Minimum prototype cosine for a history token to reuse cached KV.
    pub match_threshold: f64,
}

impl Default for RecomputePolicy {
    fn default() -> Self {
        Self {
            r_rev: 0.3,
            r_item: 0.3,
            lambda: 0.5,
            window: 64,
            match_threshold: 0.95,
        }
    }
}

impl RecomputePolicy {
    pub fn with_ratio(r: f64) -> Self {
        Self {
            r_rev: r,
            r_item: r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, v) in [("r_rev", self.r_rev), ("r_item", self.r_item), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EngineError::InvalidConfig(format!("{name}={v} outside [0, 1]")));
            }
        }
        if !self.match_threshold.is_finite() {
            return Err(EngineError::InvalidConfig("match_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Token and byte accounting for one prefill.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecomputeBreakdown {
    pub total_tokens: u64,
    pub instruction_tokens: u64,
    /// Instruction tokens served from the node's prefix cache.
    pub prefix_reused_tokens: u64,
    pub item_hit_tokens: u64,
    pub item_miss_tokens: u64,
    /// Items cached on another node and fetched over the network.
    pub item_remote_tokens: u64,
    pub history_matched_tokens: u64,
    pub history_unmatched_tokens: u64,
    /// Reused tokens selected by importance score.
    pub heavy_hitter_tokens: u64,
    /// Reused tokens in the trailing window that were not heavy hitters.
    pub window_tokens: u64,
    pub reused_blocks: u64,
    /// KV bytes moved host-to-device.
    pub transferred_bytes: u64,
    /// KV bytes pulled from other nodes.
    pub remote_bytes: u64,
}

impl RecomputeBreakdown {
    /// Everything recomputed: items count as misses, history as unmatched.
    pub fn full_recompute(instruction: u64, item_tokens: u64, history_tokens: u64) -> Self {
        Self {
            total_tokens: instruction + item_tokens + history_tokens,
            instruction_tokens: instruction,
            item_miss_tokens: item_tokens,
            history_unmatched_tokens: history_tokens,
            ..Self::default()
        }
    }

    pub fn recomputed_tokens(&self) -> u64 {
        self.instruction_tokens - self.prefix_reused_tokens
            + self.item_miss_tokens
            + self.history_unmatched_tokens
            + self.heavy_hitter_tokens
            + self.window_tokens
    }

    pub fn reused_tokens(&self) -> u64 {
        self.total_tokens - self.recomputed_tokens()
    }

    /// The class components partition the prompt.
    pub fn is_conserved(&self) -> bool {
        self.instruction_tokens
            + self.item_hit_tokens
            + self.item_miss_tokens
            + self.item_remote_tokens
            + self.history_matched_tokens
            + self.history_unmatched_tokens
            == self.total_tokens
            && self.prefix_reused_tokens <= self.instruction_tokens
            && self.heavy_hitter_tokens + self.window_tokens
                <= self.item_hit_tokens + self.item_remote_tokens + self.history_matched_tokens
    }
}

/// What a node knows when classifying one prompt.
#[derive(Debug, Clone, Copy)]
pub struct NodeContext<'a> {
    pub node: u32,
    pub assignment: &'a CatalogAssignment,
    /// Whether the node's previous prompt had the same instruction.
    pub prefix_warm: bool,
    pub remote_fetch: bool,
    pub kv_bytes_per_token: u64,
}

/// Heavy-tailed stand-in for importance scores when no model is present.
pub fn synthetic_scores<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let pareto = Pareto::new(1.0, 1.5).expect("valid Pareto parameters");
    (0..n).map(|_| rng.sample(pareto)).collect()
}

/// Classifies every token of `layout`. `history_matched[i][t]` tells
/// whether token `t` of history review `i` matched a prototype. Importance
/// scores for reused tokens are drawn from `rng`, items first, then history.
pub fn classify_tokens<R: Rng + ?Sized>(
    layout: &PromptLayout,
    ctx: &NodeContext<'_>,
    history_matched: &[Vec<bool>],
    mode: EngineMode,
    policy: &RecomputePolicy,
    rng: &mut R,
) -> RecomputeBreakdown {
    let instruction = layout.tokens_with_role(SegmentRole::Instruction);
    let items = layout.tokens_with_role(SegmentRole::ItemBlock);
    let history = layout.tokens_with_role(SegmentRole::HistoryToken);
    match mode {
        EngineMode::FullRecompute => RecomputeBreakdown::full_recompute(instruction, items, history),
        EngineMode::PrefixCache => {
            let mut b = RecomputeBreakdown::full_recompute(instruction, items, history);
            if ctx.prefix_warm {
                b.prefix_reused_tokens = instruction;
            }
            b
        }
        EngineMode::RcLlm => classify_rcllm(layout, ctx, history_matched, policy, rng),
    }
}

/// A run of reused tokens in prompt order.
struct Run {
    item: bool,
    len: usize,
    /// Per-token matched flags for history runs.
    mask: Option<Vec<bool>>,
}

fn classify_rcllm<R: Rng + ?Sized>(
    layout: &PromptLayout,
    ctx: &NodeContext<'_>,
    history_matched: &[Vec<bool>],
    policy: &RecomputePolicy,
    rng: &mut R,
) -> RecomputeBreakdown {
    let mut b = RecomputeBreakdown {
        total_tokens: layout.total_tokens(),
        ..Default::default()
    };
    let mut runs: Vec<Run> = Vec::new();
    for seg in &layout.segments {
        match (&seg.role, &seg.source) {
            (SegmentRole::Instruction, _) => b.instruction_tokens += seg.len,
            (SegmentRole::HistoryToken, SegmentSource::Review(i)) => {
                let mask = &history_matched[*i];
                debug_assert_eq!(mask.len() as u64, seg.len);
                let matched = mask.iter().filter(|&&m| m).count() as u64;
                b.history_matched_tokens += matched;
                b.history_unmatched_tokens += seg.len - matched;
                if matched > 0 {
                    b.reused_blocks += 1;
                    runs.push(Run {
                        item: false,
                        len: seg.len as usize,
                        mask: Some(mask.clone()),
                    });
                }
            }
            (SegmentRole::ItemBlock, SegmentSource::Item(idx)) => match ctx.assignment.get(*idx) {
                a if a.is_on(ctx.node) => {
                    b.item_hit_tokens += seg.len;
                    b.reused_blocks += 1;
                    runs.push(Run {
                        item: true,
                        len: seg.len as usize,
                        mask: None,
                    });
                }
                Assignment::Shard(_) if ctx.remote_fetch => {
                    b.item_remote_tokens += seg.len;
                    b.reused_blocks += 1;
                    runs.push(Run {
                        item: true,
                        len: seg.len as usize,
                        mask: None,
                    });
                }
                _ => b.item_miss_tokens += seg.len,
            },
            _ => unreachable!("decompose_prompt pairs roles with sources"),
        }
    }

    let n_item = (b.item_hit_tokens + b.item_remote_tokens) as usize;
    let n_hist = b.history_matched_tokens as usize;
    let item_heavy = top_k_mask(&synthetic_scores(rng, n_item), heavy_hitter_count(policy.r_item, n_item));
    let hist_heavy = top_k_mask(&synthetic_scores(rng, n_hist), heavy_hitter_count(policy.r_rev, n_hist));
    b.heavy_hitter_tokens = (item_heavy.iter().filter(|&&h| h).count()
        + hist_heavy.iter().filter(|&&h| h).count()) as u64;

    // Walk reused tokens backwards to find the trailing window.
    let mut left = policy.window;
    let (mut ii, mut hi) = (n_item, n_hist);
    for run in runs.iter().rev() {
        if left == 0 {
            break;
        }
        if run.item {
            let take = left.min(run.len);
            b.window_tokens += item_heavy[ii - take..ii].iter().filter(|&&h| !h).count() as u64;
            ii -= run.len;
            left -= take;
        } else {
            let mask = run.mask.as_ref().expect("history runs carry a mask");
            for &m in mask.iter().rev() {
                if !m {
                    continue;
                }
                hi -= 1;
                if left > 0 {
                    if !hist_heavy[hi] {
                        b.window_tokens += 1;
                    }
                    left -= 1;
                }
            }
        }
    }

    let reused_local = b.item_hit_tokens + b.history_matched_tokens;
    b.transferred_bytes = reused_local * ctx.kv_bytes_per_token;
    b.remote_bytes = b.item_remote_tokens * ctx.kv_bytes_per_token;
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{decompose_prompt, Catalog, HistoryEntry, ItemRecord, Request};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n_items: usize, item_tokens: u32, history: &[usize]) -> (Catalog, PromptLayout) {
        let mut cat = Catalog::new();
        for i in 0..n_items {
            cat.insert(ItemRecord {
                item_id: format!("i{i}"),
                token_count: item_tokens,
                category: "c".into(),
            })
            .unwrap();
        }
        let req = Request {
            request_id: "r".into(),
            arrival_time: 0.0,
            instruction_tokens: 207,
            history: history
                .iter()
                .map(|&n| HistoryEntry {
                    item_id: "i0".into(),
                    rating: 4,
                    token_ids: vec![1; n],
                })
                .collect(),
            candidates: (0..n_items).map(|i| format!("i{i}")).collect(),
        };
        let layout = decompose_prompt(&req, &cat, 207).unwrap();
        (cat, layout)
    }

    fn ctx(assignment: &CatalogAssignment) -> NodeContext<'_> {
        NodeContext {
            node: 0,
            assignment,
            prefix_warm: false,
            remote_fetch: false,
            kv_bytes_per_token: 275_000,
        }
    }

    fn run(layout: &PromptLayout, c: &NodeContext<'_>, hist: &[Vec<bool>], mode: EngineMode, p: &RecomputePolicy) -> RecomputeBreakdown {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        classify_tokens(layout, c, hist, mode, p, &mut rng)
    }

    #[test]
    fn everything_reused_leaves_the_instruction() {
        let (_, layout) = setup(5, 40, &[30, 20]);
        let asg = CatalogAssignment {
            k: 2,
            assign: vec![Assignment::Shard(0); 5],
        };
        let hist = vec![vec![true; 30], vec![true; 20]];
        let p = RecomputePolicy {
            window: 0,
            ..RecomputePolicy::with_ratio(0.0)
        };
        let b = run(&layout, &ctx(&asg), &hist, EngineMode::RcLlm, &p);
        assert_eq!(b.recomputed_tokens(), 207);
        assert_eq!(b.reused_blocks, 7);
        assert_eq!(b.transferred_bytes, 250 * 275_000);
        assert!(b.is_conserved());
    }

    #[test]
    fn ratio_one_recomputes_everything() {
        let (_, layout) = setup(6, 50, &[25]);
        let mut asg = CatalogAssignment::uncached(2, 6);
        asg.assign[1] = Assignment::Shard(0);
        asg.assign[2] = Assignment::Replicated;
        let hist = vec![(0..25).map(|i| i % 3 != 0).collect()];
        let b = run(&layout, &ctx(&asg), &hist, EngineMode::RcLlm, &RecomputePolicy::with_ratio(1.0));
        assert_eq!(b.recomputed_tokens(), b.total_tokens);
        assert_eq!(b.window_tokens, 0);

        // With nothing cached the breakdown is exactly the full recompute one.
        let empty = CatalogAssignment::uncached(2, 6);
        let none = vec![vec![false; 25]];
        let b = run(&layout, &ctx(&empty), &none, EngineMode::RcLlm, &RecomputePolicy::with_ratio(1.0));
        let full = run(&layout, &ctx(&empty), &none, EngineMode::FullRecompute, &RecomputePolicy::default());
        assert_eq!(b, full);
    }

    #[test]
    fn item_heavy_hitter_count() {
        let (_, layout) = setup(20, 87, &[]);
        let mut asg = CatalogAssignment::uncached(1, 20);
        for a in asg.assign.iter_mut().take(15) {
            *a = Assignment::Shard(0);
        }
        let p = RecomputePolicy {
            window: 0,
            ..RecomputePolicy::with_ratio(0.3)
        };
        let b = run(&layout, &ctx(&asg), &[], EngineMode::RcLlm, &p);
        assert_eq!(b.item_hit_tokens, 15 * 87);
        assert_eq!(b.item_miss_tokens, 5 * 87);
        // ceil(0.3 * 1305) = 392
        assert_eq!(b.heavy_hitter_tokens, 392);
        assert_eq!(b.recomputed_tokens(), 207 + 5 * 87 + 392);
    }

    #[test]
    fn window_counts_only_non_heavy_reused_tail() {
        let (_, layout) = setup(3, 10, &[]);
        let asg = CatalogAssignment {
            k: 1,
            assign: vec![Assignment::Shard(0), Assignment::Uncached, Assignment::Shard(0)],
        };
        let p = RecomputePolicy {
            window: 15,
            ..RecomputePolicy::with_ratio(0.0)
        };
        let b = run(&layout, &ctx(&asg), &[], EngineMode::RcLlm, &p);
        // The window spans the last 15 reused tokens across both hit items.
        assert_eq!(b.window_tokens, 15);
        let p = RecomputePolicy {
            window: 100,
            ..RecomputePolicy::with_ratio(0.5)
        };
        let b = run(&layout, &ctx(&asg), &[], EngineMode::RcLlm, &p);
        assert_eq!(b.heavy_hitter_tokens + b.window_tokens, 20);
        assert_eq!(b.recomputed_tokens(), b.total_tokens);
    }

    #[test]
    fn prefix_cache_reuses_instruction_only_when_warm() {
        let (_, layout) = setup(4, 30, &[10]);
        let asg = CatalogAssignment {
            k: 1,
            assign: vec![Assignment::Shard(0); 4],
        };
        let hist = vec![vec![true; 10]];
        let mut c = ctx(&asg);
        let cold = run(&layout, &c, &hist, EngineMode::PrefixCache, &RecomputePolicy::default());
        assert_eq!(cold.recomputed_tokens(), cold.total_tokens);
        c.prefix_warm = true;
        let warm = run(&layout, &c, &hist, EngineMode::PrefixCache, &RecomputePolicy::default());
        assert_eq!(warm.recomputed_tokens(), warm.total_tokens - 207);
        assert_eq!(warm.transferred_bytes, 0);
        assert!(warm.is_conserved());
    }

    #[test]
    fn remote_items_use_the_network() {
        let (_, layout) = setup(2, 20, &[]);
        let asg = CatalogAssignment {
            k: 2,
            assign: vec![Assignment::Shard(0), Assignment::Shard(1)],
        };
        let p = RecomputePolicy {
            window: 0,
            ..RecomputePolicy::with_ratio(0.0)
        };
        let local = run(&layout, &ctx(&asg), &[], EngineMode::RcLlm, &p);
        assert_eq!((local.item_hit_tokens, local.item_miss_tokens), (20, 20));
        let mut c = ctx(&asg);
        c.remote_fetch = true;
        let remote = run(&layout, &c, &[], EngineMode::RcLlm, &p);
        assert_eq!((remote.item_remote_tokens, remote.item_miss_tokens), (20, 0));
        assert_eq!(remote.remote_bytes, 20 * 275_000);
        assert!(remote.is_conserved());
    }

    #[test]
    fn mode_labels_round_trip() {
        for m in [EngineMode::RcLlm, EngineMode::FullRecompute, EngineMode::PrefixCache] {
            assert_eq!(EngineMode::parse(m.label()).unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.label()));
        }
        assert!(EngineMode::parse("vllm").is_err());
        assert!(RecomputePolicy::with_ratio(1.5).validate().is_err());
    }
}
