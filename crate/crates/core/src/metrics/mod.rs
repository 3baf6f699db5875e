//! Aggregation over run records: nearest-rank percentiles, empirical CDFs,
//! pairwise speedup tables and the per-run summary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Run, RunMeta, RunRecord};
use crate::placement::{footprint, PlacementPlan, ShardFootprint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("run has no records")]
    EmptyRun,
    #[error("runs cover different requests: {0}")]
    TraceMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Value at rank `ceil(q * n)` of the sorted sample (1-based).
pub fn nearest_rank(sorted: &[f64], q: f64) -> Result<f64, MetricsError> {
    if sorted.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(MetricsError::InvalidArgument(format!("quantile {q} outside (0, 1]")));
    }
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn percentiles_of(values: &[f64]) -> Result<Percentiles, MetricsError> {
    let s = sorted(values.iter().copied());
    Ok(Percentiles {
        p50: nearest_rank(&s, 0.5)?,
        p90: nearest_rank(&s, 0.9)?,
        p99: nearest_rank(&s, 0.99)?,
    })
}

/// TTFT percentiles of a run.
pub fn percentiles(records: &[RunRecord]) -> Result<Percentiles, MetricsError> {
    percentiles_of(&records.iter().map(|r| r.ttft).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub ttft: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub points: Vec<CdfPoint>,
}

impl CdfSeries {
    /// True when every point of `self` is at or left of the matching point
    /// of `other` (both sampled at the same fractions).
    pub fn dominates(&self, other: &CdfSeries) -> bool {
        self.points.len() == other.points.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.ttft <= b.ttft)
    }
}

/// Empirical TTFT CDF sampled at fractions `i / n_points`, `i = 1..=n_points`.
pub fn cdf(records: &[RunRecord], n_points: usize) -> Result<CdfSeries, MetricsError> {
    if n_points == 0 {
        return Err(MetricsError::InvalidArgument("n_points must be at least 1".into()));
    }
    let s = sorted(records.iter().map(|r| r.ttft));
    let points = (1..=n_points)
        .map(|i| {
            let fraction = i as f64 / n_points as f64;
            Ok(CdfPoint {
                ttft: nearest_rank(&s, fraction)?,
                fraction,
            })
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(CdfSeries { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
}

/// `a` measured against baseline `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    pub n_requests: usize,
    /// Baseline TTFT divided by candidate TTFT at each statistic.
    pub speedup: Speedup,
    /// Whether `a` is never slower than `b` on any request.
    pub dominates: bool,
    /// Requests on which `a` is slower.
    pub violations: usize,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

fn label(meta: &RunMeta) -> String {
    format!("{}/{}", meta.mode.label(), meta.policy.label())
}

/// Per-percentile speedup of `a` over `b` and the per-request dominance
/// flag. Requests are matched by id.
pub fn compare(a: &Run, b: &Run) -> Result<Comparison, MetricsError> {
    if a.records.is_empty() || b.records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let by_id: HashMap<&str, &RunRecord> = b.records.iter().map(|r| (r.request_id.as_str(), r)).collect();
    if by_id.len() != a.records.len() {
        return Err(MetricsError::TraceMismatch(format!(
            "{} requests against {}",
            a.records.len(),
            b.records.len()
        )));
    }
    let mut violations = 0;
    for r in &a.records {
        let other = by_id
            .get(r.request_id.as_str())
            .ok_or_else(|| MetricsError::TraceMismatch(format!("{} missing from baseline", r.request_id)))?;
        if r.ttft > other.ttft {
            violations += 1;
        }
    }
    let (pa, pb) = (percentiles(&a.records)?, percentiles(&b.records)?);
    let ma = mean(a.records.iter().map(|r| r.ttft));
    let mb = mean(b.records.iter().map(|r| r.ttft));
    Ok(Comparison {
        candidate: label(&a.meta),
        baseline: label(&b.meta),
        n_requests: a.records.len(),
        speedup: Speedup {
            p50: pb.p50 / pa.p50,
            p90: pb.p90 / pa.p90,
            p99: pb.p99 / pa.p99,
            mean: mb / ma,
        },
        dominates: violations == 0,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run: RunMeta,
    pub n_requests: usize,
    pub ttft: Percentiles,
    pub mean_ttft: f64,
    pub mean_service: f64,
    pub hit_ratio_mean: f64,
    pub hit_ratio_median: f64,
    /// Matched history tokens over all history tokens.
    pub history_match_rate: f64,
    /// Recomputed tokens over all prompt tokens.
    pub recompute_fraction: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub footprint: Vec<ShardFootprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub versus: Option<Comparison>,
}

/// Aggregates a run. The footprint is filled when `plan` is given; the
/// speedup table when `baseline` is.
pub fn summarize(run: &Run, plan: Option<&PlacementPlan>, baseline: Option<&Run>) -> Result<Summary, MetricsError> {
    let recs = &run.records;
    if recs.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let hits = sorted(recs.iter().map(|r| r.hit_ratio));
    let (matched, history, recomputed, total) = recs.iter().fold((0u64, 0u64, 0u64, 0u64), |acc, r| {
        let b = &r.breakdown;
        (
            acc.0 + b.history_matched_tokens,
            acc.1 + b.history_matched_tokens + b.history_unmatched_tokens,
            acc.2 + b.recomputed_tokens(),
            acc.3 + b.total_tokens,
        )
    });
    Ok(Summary {
        run: run.meta.clone(),
        n_requests: recs.len(),
        ttft: percentiles(recs)?,
        mean_ttft: mean(recs.iter().map(|r| r.ttft)),
        mean_service: mean(recs.iter().map(|r| r.service)),
        hit_ratio_mean: mean(hits.iter().copied()),
        hit_ratio_median: nearest_rank(&hits, 0.5)?,
        history_match_rate: if history == 0 { 0.0 } else { matched as f64 / history as f64 },
        recompute_fraction: if total == 0 { 0.0 } else { recomputed as f64 / total as f64 },
        footprint: plan.map_or_else(Vec::new, |p| footprint(p, p.kv_bytes_per_token)),
        versus: baseline.map(|b| compare(run, b)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, EngineMode, RecomputeBreakdown};
    use crate::scheduler::Policy;

    fn run(ttfts: &[f64]) -> Run {
        let records: Vec<RunRecord> = ttfts
            .iter()
            .enumerate()
            .map(|(i, &t)| RunRecord {
                request_id: format!("r{i}"),
                routed_node: 0,
                arrival: 0.0,
                enqueue: 0.0,
                start: 0.0,
                finish: t,
                ttft: t,
                service: t,
                hit_ratio: 0.5,
                breakdown: RecomputeBreakdown::default(),
                mode: "rcllm".into(),
                policy: "x".into(),
            })
            .collect();
        Run {
            meta: RunMeta {
                mode: EngineMode::RcLlm,
                policy: Policy::default(),
                seed: 0,
                k: 1,
                n_requests: records.len(),
                trace_source: "t".into(),
                trace_qps: 1.0,
                trace_seed: 0,
                replayed_from: None,
                engine: EngineConfig::default(),
            },
            records,
        }
    }

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let p = percentiles_of(&v).unwrap();
        assert_eq!((p.p50, p.p90, p.p99), (50.0, 90.0, 99.0));
        let one = percentiles_of(&[3.5]).unwrap();
        assert_eq!((one.p50, one.p90, one.p99), (3.5, 3.5, 3.5));
        assert_eq!(percentiles_of(&[]), Err(MetricsError::EmptyRun));
    }

    #[test]
    fn cdf_shapes() {
        let r = run(&[2.0, 2.0, 2.0, 2.0]);
        let c = cdf(&r.records, 4).unwrap();
        assert!(c.points.iter().all(|p| p.ttft == 2.0));
        assert_eq!(c.points.last().unwrap().fraction, 1.0);
        let r = run(&[5.0, 1.0, 9.0]);
        let c = cdf(&r.records, 1).unwrap();
        assert_eq!(c.points, vec![CdfPoint { ttft: 9.0, fraction: 1.0 }]);
        assert!(cdf(&run(&[]).records, 3).is_err());
    }

    #[test]
    fn compare_identity_and_ratio() {
        let a = run(&[1.0, 2.0, 4.0]);
        let c = compare(&a, &a).unwrap();
        assert_eq!(c.speedup.p50, 1.0);
        assert_eq!(c.speedup.p99, 1.0);
        assert!(c.dominates);
        let b = run(&[3.0, 6.0, 12.0]);
        let c = compare(&a, &b).unwrap();
        assert_eq!((c.speedup.p50, c.speedup.p90, c.speedup.p99), (3.0, 3.0, 3.0));
        assert!(c.dominates);
        let c = compare(&b, &a).unwrap();
        assert_eq!(c.violations, 3);
        assert!(matches!(compare(&a, &run(&[1.0, 2.0])), Err(MetricsError::TraceMismatch(_))));
    }

    #[test]
    fn summary_fields() {
        let a = run(&[1.0, 2.0, 4.0]);
        let s = summarize(&a, None, Some(&a)).unwrap();
        assert_eq!(s.ttft.p50, 2.0);
        assert!((s.mean_ttft - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.hit_ratio_median, 0.5);
        assert!(s.versus.unwrap().dominates);
        assert_eq!(summarize(&run(&[]), None, None), Err(MetricsError::EmptyRun));
    }
}
