mod common;

use proptest::prelude::*;
use reckv::placement::{compute_heat, UsageCorpus};
use reckv::workload::{
    decompose_prompt, read_trace, synthesize_trace, write_catalog, write_reviews, write_trace, SegmentRole,
    SynthConfig, Synthesizer, TokenDist,
};

fn serialized(cfg: &SynthConfig, seed: u64) -> Vec<u8> {
    let (catalog, corpus, trace) = synthesize_trace(cfg, seed).unwrap();
    let mut out = Vec::new();
    write_catalog(&mut out, &catalog).unwrap();
    write_reviews(&mut out, &corpus).unwrap();
    write_trace(&mut out, &trace).unwrap();
    out
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = SynthConfig {
        n_requests: 1_000,
        ..common::small_workload()
    };
    let a = serialized(&cfg, 7);
    assert_eq!(a, serialized(&cfg, 7));
    assert_ne!(a, serialized(&cfg, 8));
}

fn zipf_partial(n: usize, s: f64) -> f64 {
    (1..=n).map(|r| (r as f64).powf(-s)).sum()
}

fn candidate_counts_by_rank(s: &Synthesizer) -> Vec<u64> {
    let mut counts = vec![0u64; s.catalog().len()];
    for r in &s.trace().requests {
        for c in &r.candidates {
            counts[s.rank_of(s.catalog().index_of(c).unwrap())] += 1;
        }
    }
    counts
}

fn unclustered_zipf(s: f64) -> Synthesizer {
    let cfg = SynthConfig {
        n_items: 10_000,
        n_requests: 2_000,
        zipf_s: s,
        cluster_coherence: 0.0,
        ..SynthConfig::default()
    };
    Synthesizer::new(cfg, 7).unwrap()
}

#[test]
fn top_percent_share_sits_between_bounds() {
    let s = unclustered_zipf(1.2);
    let counts = candidate_counts_by_rank(&s);
    let share = counts[..100].iter().sum::<u64>() as f64 / counts.iter().sum::<u64>() as f64;
    // Candidates are distinct within a request, which can only thin out the
    // head relative to independent draws.
    let with_replacement = zipf_partial(100, 1.2) / zipf_partial(10_000, 1.2);
    assert!(share >= 0.30, "top 1% share {share}");
    assert!(share <= with_replacement, "share {share} above {with_replacement}");
}

#[test]
fn heat_rank_frequency_slope_matches_exponent() {
    let s = unclustered_zipf(1.2);
    let trace = s.trace();
    let heat = compute_heat(s.catalog(), UsageCorpus::traces_only(std::slice::from_ref(&trace)));
    let mut h: Vec<u64> = heat.as_slice().to_vec();
    h.sort_unstable_by(|a, b| b.cmp(a));
    let pts: Vec<(f64, f64)> = (5..=1000)
        .map(|r| ((r as f64).ln(), (h[r - 1] as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 1.2).abs() <= 0.15, "slope {slope}");
}

#[test]
fn occurrences_fall_with_rank() {
    let counts = candidate_counts_by_rank(&unclustered_zipf(1.0));
    // Rank bands of growing width keep sampling noise below the trend.
    let bands = [0, 10, 30, 100, 300, 1_000, 3_000, 10_000];
    let per_rank: Vec<f64> = bands
        .windows(2)
        .map(|w| counts[w[0]..w[1]].iter().sum::<u64>() as f64 / (w[1] - w[0]) as f64)
        .collect();
    assert!(per_rank.windows(2).all(|w| w[1] <= w[0]), "{per_rank:?}");
}

#[test]
fn default_prompts_have_paper_scale_median() {
    let cfg = SynthConfig {
        n_requests: 2_000,
        ..SynthConfig::default()
    };
    let s = Synthesizer::new(cfg, 7).unwrap();
    let mut lens: Vec<u64> = s
        .trace()
        .requests
        .iter()
        .map(|r| decompose_prompt(r, s.catalog(), r.instruction_tokens).unwrap().total_tokens())
        .collect();
    lens.sort_unstable();
    let median = lens[lens.len().div_ceil(2) - 1];
    assert!((2_200..=3_000).contains(&median), "median prompt {median}");
}

#[test]
fn canonical_trace_round_trips() {
    let (_, _, trace) = synthesize_trace(&common::small_workload(), 3).unwrap();
    let mut first = Vec::new();
    write_trace(&mut first, &trace).unwrap();
    let back = read_trace(first.as_slice()).unwrap();
    assert_eq!(back, trace);
    let mut second = Vec::new();
    write_trace(&mut second, &back).unwrap();
    assert_eq!(first, second);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn layouts_conserve_tokens(
        seed in 0u64..1_000,
        n_items in 50usize..400,
        cands in 1usize..30,
        coherence in 0.0f64..=1.0,
        instruction in 0u32..300,
        max_hist in 0u32..6,
    ) {
        let cfg = SynthConfig {
            n_items,
            n_users: 20,
            n_requests: 30,
            n_clusters: (n_items / 10).max(1),
            candidates_per_request: cands.min(n_items),
            cluster_coherence: coherence,
            instruction_tokens: instruction,
            history_len_dist: TokenDist::Uniform { min: 0, max: max_hist },
            ..SynthConfig::default()
        };
        let s = Synthesizer::new(cfg, seed).unwrap();
        for r in &s.trace().requests {
            let layout = decompose_prompt(r, s.catalog(), r.instruction_tokens).unwrap();
            let mut pos = 0;
            for seg in &layout.segments {
                prop_assert_eq!(seg.start, pos);
                prop_assert!(seg.len > 0);
                pos = seg.end();
            }
            let items: u64 = r.candidates.iter().map(|c| s.catalog().get(c).unwrap().token_count as u64).sum();
            prop_assert_eq!(layout.total_tokens(), instruction as u64 + r.history_tokens() + items);
            prop_assert_eq!(layout.tokens_with_role(SegmentRole::ItemBlock), items);
            prop_assert_eq!(layout.tokens_with_role(SegmentRole::HistoryToken), r.history_tokens());
        }
    }
}
