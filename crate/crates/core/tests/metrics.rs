use proptest::prelude::*;
use reckv::engine::{EngineConfig, EngineMode, RecomputeBreakdown, Run, RunMeta, RunRecord};
use reckv::metrics::{cdf, compare, percentiles, MetricsError};
use reckv::scheduler::Policy;

fn run_of(ttfts: &[f64], mode: EngineMode) -> Run {
    let records = ttfts
        .iter()
        .enumerate()
        .map(|(i, &t)| RunRecord {
            request_id: format!("req-{i:07}"),
            routed_node: 0,
            arrival: 0.0,
            enqueue: 0.0,
            start: 0.0,
            finish: t,
            ttft: t,
            service: t,
            hit_ratio: 0.0,
            breakdown: RecomputeBreakdown::default(),
            mode: mode.label().to_string(),
            policy: "least_loaded".into(),
        })
        .collect();
    Run {
        meta: RunMeta {
            mode,
            policy: Policy::LeastLoaded,
            seed: 0,
            k: 1,
            n_requests: ttfts.len(),
            trace_source: "test".into(),
            trace_qps: 1.0,
            trace_seed: 0,
            replayed_from: None,
            engine: EngineConfig::default(),
        },
        records,
    }
}

/// Smallest sample value with at least `q * n` values at or below it.
fn oracle_percentile(values: &[f64], q: f64) -> f64 {
    let n = values.len();
    let mut best = f64::INFINITY;
    for &v in values {
        let at_or_below = values.iter().filter(|&&x| x <= v).count();
        if at_or_below as f64 * 100.0 >= (q * 100.0).round() * n as f64 && v < best {
            best = v;
        }
    }
    best
}

#[test]
fn one_to_hundred() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    let p = percentiles(&run_of(&v, EngineMode::RcLlm).records).unwrap();
    assert_eq!((p.p50, p.p90, p.p99), (50.0, 90.0, 99.0));
}

#[test]
fn empty_run_is_an_error() {
    assert!(matches!(percentiles(&[]), Err(MetricsError::EmptyRun)));
    assert!(matches!(cdf(&[], 10), Err(MetricsError::EmptyRun)));
}

#[test]
fn mismatched_runs_are_rejected() {
    let a = run_of(&[1.0, 2.0, 3.0], EngineMode::RcLlm);
    let b = run_of(&[1.0, 2.0], EngineMode::PrefixCache);
    assert!(matches!(compare(&a, &b), Err(MetricsError::TraceMismatch(_))));
    let mut c = run_of(&[1.0, 2.0, 3.0], EngineMode::PrefixCache);
    c.records[2].request_id = "other".into();
    assert!(matches!(compare(&a, &c), Err(MetricsError::TraceMismatch(_))));
}

proptest! {
    #[test]
    fn percentiles_follow_nearest_rank(v in prop::collection::vec(0.0f64..100.0, 1..300)) {
        let p = percentiles(&run_of(&v, EngineMode::RcLlm).records).unwrap();
        prop_assert!(p.p50 <= p.p90 && p.p90 <= p.p99);
        prop_assert_eq!(p.p50, oracle_percentile(&v, 0.5));
        prop_assert_eq!(p.p90, oracle_percentile(&v, 0.9));
        prop_assert_eq!(p.p99, oracle_percentile(&v, 0.99));
    }

    #[test]
    fn cdf_is_monotone_with_correct_endpoints(
        v in prop::collection::vec(0.0f64..100.0, 1..300),
        n_points in 1usize..200,
    ) {
        let c = cdf(&run_of(&v, EngineMode::RcLlm).records, n_points).unwrap();
        prop_assert_eq!(c.points.len(), n_points);
        for w in c.points.windows(2) {
            prop_assert!(w[0].fraction < w[1].fraction);
            prop_assert!(w[0].ttft <= w[1].ttft);
        }
        let last = c.points.last().unwrap();
        prop_assert_eq!(last.fraction, 1.0);
        prop_assert_eq!(last.ttft, v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        prop_assert!(c.points[0].fraction > 0.0);
        prop_assert!(c.points[0].ttft >= v.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn speedups_are_ratios_and_dominance_is_pointwise(
        base in prop::collection::vec(0.01f64..10.0, 1..200),
        factors in prop::collection::vec(0.2f64..1.5, 200),
    ) {
        let cand: Vec<f64> = base.iter().zip(&factors).map(|(b, f)| b * f).collect();
        let (a, b) = (run_of(&cand, EngineMode::RcLlm), run_of(&base, EngineMode::PrefixCache));
        let c = compare(&a, &b).unwrap();
        let (pa, pb) = (percentiles(&a.records).unwrap(), percentiles(&b.records).unwrap());
        prop_assert_eq!(c.speedup.p50, pb.p50 / pa.p50);
        prop_assert_eq!(c.speedup.p99, pb.p99 / pa.p99);
        prop_assert!(c.speedup.p50 > 0.0 && c.speedup.p90 > 0.0 && c.speedup.p99 > 0.0 && c.speedup.mean > 0.0);
        let slower = cand.iter().zip(&base).filter(|(x, y)| x > y).count();
        prop_assert_eq!(c.violations, slower);
        prop_assert_eq!(c.dominates, slower == 0);

        let same = compare(&b, &b).unwrap();
        prop_assert_eq!((same.speedup.p50, same.speedup.p90, same.speedup.p99, same.speedup.mean), (1.0, 1.0, 1.0, 1.0));
        prop_assert!(same.dominates);
    }
}
