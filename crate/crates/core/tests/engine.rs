mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reckv::config::Config;
use reckv::engine::{
    classify_tokens, importance_scores, prefill_latency, replay, rope_encode, rope_realign, simulate, write_run,
    EngineConfig, EngineMode, HistoryMatches, NodeContext, RecomputePolicy, Run, SimInput, DEFAULT_ROPE_BASE,
};
use reckv::pipeline::{build_placement, build_semlib, synthesize, Dataset};
use reckv::placement::{Assignment, CatalogAssignment};
use reckv::semlib::Embedder;
use reckv::workload::decompose_prompt;

struct Fixture {
    cfg: Config,
    data: Dataset,
    assignment: CatalogAssignment,
    matches: HistoryMatches,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = common::small_config();
        let data = synthesize(&cfg).unwrap();
        let assignment = build_placement(&cfg, &data, false).unwrap().for_catalog(&data.catalog);
        let lib = build_semlib(&cfg, &data).unwrap();
        let emb = Embedder::new(lib.embedding().clone()).unwrap();
        let matches = HistoryMatches::compute(&data.trace, &lib, &emb).unwrap();
        Fixture {
            cfg,
            data,
            assignment,
            matches,
        }
    })
}

fn input(f: &Fixture) -> SimInput<'_> {
    SimInput {
        trace: &f.data.trace,
        catalog: &f.data.catalog,
        assignment: &f.assignment,
        history: Some(&f.matches),
    }
}

fn with_mode(mode: EngineMode, r: f64) -> EngineConfig {
    let mut e = fixture().cfg.engine_config();
    e.mode = mode;
    e.recompute.r_rev = r;
    e.recompute.r_item = r;
    e
}

fn bytes(run: &Run) -> Vec<u8> {
    let mut out = Vec::new();
    write_run(&mut out, run).unwrap();
    out
}

#[test]
fn records_respect_time_ordering() {
    let f = fixture();
    let run = simulate(input(f), f.cfg.scheduler, &with_mode(EngineMode::RcLlm, 0.3)).unwrap();
    for r in &run.records {
        assert!(r.arrival <= r.start && r.start <= r.finish, "{}", r.request_id);
        assert!((r.ttft - (r.finish - r.arrival)).abs() <= 1e-9);
        assert!(r.breakdown.is_conserved());
        assert_eq!(r.service, prefill_latency(&r.breakdown, &f.cfg.engine.cost));
    }
}

#[test]
fn same_seed_same_record_stream() {
    let f = fixture();
    let cfg = with_mode(EngineMode::RcLlm, 0.3);
    let a = simulate(input(f), f.cfg.scheduler, &cfg).unwrap();
    let b = simulate(input(f), f.cfg.scheduler, &cfg).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn service_rises_with_ratio_on_fixed_routes() {
    let f = fixture();
    let reference = simulate(input(f), f.cfg.scheduler, &with_mode(EngineMode::RcLlm, 0.3)).unwrap();
    let runs: Vec<Run> = [0.0, 0.1, 0.3, 0.5, 0.8, 1.0]
        .iter()
        .map(|&r| replay(input(f), &reference, &with_mode(EngineMode::RcLlm, r)).unwrap())
        .collect();
    for pair in runs.windows(2) {
        for (lo, hi) in pair[0].records.iter().zip(&pair[1].records) {
            assert_eq!(lo.routed_node, hi.routed_node);
            assert!(lo.service <= hi.service, "{}: {} > {}", lo.request_id, lo.service, hi.service);
        }
    }
}

#[test]
fn rcllm_is_never_slower_than_prefix_cache_per_request() {
    let f = fixture();
    let rc = simulate(input(f), f.cfg.scheduler, &with_mode(EngineMode::RcLlm, 0.3)).unwrap();
    let pc = replay(input(f), &rc, &with_mode(EngineMode::PrefixCache, 0.3)).unwrap();
    for (a, b) in rc.records.iter().zip(&pc.records) {
        assert!(a.service <= b.service, "{}", a.request_id);
    }
}

#[test]
fn ratio_one_on_empty_caches_is_full_recompute() {
    let f = fixture();
    let empty = CatalogAssignment::uncached(f.assignment.k, f.data.catalog.len());
    let cold = SimInput {
        assignment: &empty,
        history: None,
        ..input(f)
    };
    let rc = simulate(cold, f.cfg.scheduler, &with_mode(EngineMode::RcLlm, 1.0)).unwrap();
    let full = simulate(cold, f.cfg.scheduler, &with_mode(EngineMode::FullRecompute, 1.0)).unwrap();
    for (a, b) in rc.records.iter().zip(&full.records) {
        assert_eq!(a.breakdown, b.breakdown);
        assert_eq!((a.routed_node, a.start, a.finish, a.ttft), (b.routed_node, b.start, b.finish, b.ttft));
    }
}

fn assignment_for(n_items: usize, k: u32, rng: &mut ChaCha8Rng) -> CatalogAssignment {
    let assign = (0..n_items)
        .map(|_| match rng.random_range(0..10) {
            0 => Assignment::Replicated,
            1 => Assignment::Uncached,
            _ => Assignment::Shard(rng.random_range(0..k)),
        })
        .collect();
    CatalogAssignment { k, assign }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn breakdowns_partition_the_prompt(
        seed in any::<u64>(),
        req in 0usize..400,
        // Ratios as p/10 so the expected counts are integer ceilings.
        p_item in 0u64..=10,
        p_rev in 0u64..=10,
        window in 0usize..200,
        warm in any::<bool>(),
        remote in any::<bool>(),
        match_p in 0.0f64..=1.0,
    ) {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 8;
        let a = assignment_for(f.data.catalog.len(), k, &mut rng);
        let r = &f.data.trace.requests[req];
        let layout = decompose_prompt(r, &f.data.catalog, r.instruction_tokens).unwrap();
        let matched: Vec<Vec<bool>> = r.history.iter().map(|h| h.token_ids.iter().map(|_| rng.random_bool(match_p)).collect()).collect();
        let policy = RecomputePolicy {
            r_item: p_item as f64 / 10.0,
            r_rev: p_rev as f64 / 10.0,
            window,
            ..RecomputePolicy::default()
        };
        let ctx = NodeContext {
            node: rng.random_range(0..k),
            assignment: &a,
            prefix_warm: warm,
            remote_fetch: remote,
            kv_bytes_per_token: 1_000,
        };
        for mode in [EngineMode::RcLlm, EngineMode::PrefixCache, EngineMode::FullRecompute] {
            let b = classify_tokens(&layout, &ctx, &matched, mode, &policy, &mut rng);
            prop_assert!(b.is_conserved());
            prop_assert_eq!(b.total_tokens, layout.total_tokens());
            prop_assert_eq!(b.recomputed_tokens() + b.reused_tokens(), b.total_tokens);
            if mode == EngineMode::RcLlm {
                let reused_items = b.item_hit_tokens + b.item_remote_tokens;
                let heavy = (p_item * reused_items).div_ceil(10) + (p_rev * b.history_matched_tokens).div_ceil(10);
                prop_assert_eq!(b.heavy_hitter_tokens, heavy);
                prop_assert!(b.window_tokens <= window as u64);
                prop_assert_eq!(b.prefix_reused_tokens, 0);
            } else {
                prop_assert_eq!(b.reused_tokens(), b.prefix_reused_tokens);
            }
        }
    }

    #[test]
    fn scorer_matches_direct_sum(
        n in 1usize..=256,
        d in 1usize..12,
        lambda in prop_oneof![Just(0.0), Just(0.3), Just(0.5), Just(1.0), 0.0f64..=1.0],
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |w: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (attn, kn, kc, vn, vc) = (mat(n), mat(d), mat(d), mat(d), mat(d));
        let got = importance_scores(&attn, &kn, &kc, &vn, &vc, lambda).unwrap();
        for i in 0..n {
            let mut want = 0.0;
            for x in &attn[i] {
                want += (1.0 - lambda) * x.abs();
            }
            for j in 0..d {
                want += lambda * ((kn[i][j] - kc[i][j]).abs() + (vn[i][j] - vc[i][j]).abs());
            }
            prop_assert!((got[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn realignment_is_an_isometry(
        v in prop::collection::vec(-10.0f64..10.0, 1..64),
        old in 0u64..100_000,
        new in 0u64..100_000,
    ) {
        let v: Vec<f64> = if v.len() % 2 == 1 { v[1..].to_vec() } else { v };
        prop_assume!(!v.is_empty());
        let enc = rope_encode(&v, old as f64, DEFAULT_ROPE_BASE).unwrap();
        let moved = rope_realign(std::slice::from_ref(&enc), old, new, DEFAULT_ROPE_BASE).unwrap();
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((norm(&moved[0]) - norm(&v)).abs() <= 1e-9);
        let back = rope_realign(&moved, new, old, DEFAULT_ROPE_BASE).unwrap();
        for (a, b) in back[0].iter().zip(&enc) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
