//! Request routing: the affinity score that trades estimated item-cache hit
//! ratio against normalized backlog, plus the baseline policies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::placement::CatalogAssignment;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("cluster has no nodes")]
    EmptyCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Affinity { alpha: f64, beta: f64 },
    RoundRobin,
    LeastLoaded,
    HitOnly,
    LoadOnly,
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Affinity {
            alpha: 0.7,
            beta: 0.3,
        }
    }
}

impl Policy {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if let Policy::Affinity { alpha, beta } = *self {
            if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0) || !(alpha + beta).is_finite() {
                return Err(SchedulerError::InvalidPolicy(format!(
                    "affinity weights ({alpha}, {beta}) must be non-negative with a positive sum"
                )));
            }
        }
        Ok(())
    }

    /// Score weights for the policies that rank by affinity.
    pub fn weights(&self) -> Option<(f64, f64)> {
        match *self {
            Policy::Affinity { alpha, beta } => Some((alpha, beta)),
            Policy::HitOnly => Some((1.0, 0.0)),
            Policy::LoadOnly => Some((0.0, 1.0)),
            Policy::RoundRobin | Policy::LeastLoaded => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Policy::Affinity { alpha, beta } => format!("affinity({alpha},{beta})"),
            Policy::RoundRobin => "round_robin".into(),
            Policy::LeastLoaded => "least_loaded".into(),
            Policy::HitOnly => "hit_only".into(),
            Policy::LoadOnly => "load_only".into(),
        }
    }

    /// Parses `affinity`, `affinity:0.7,0.3`, `hit_only`, `load_only`,
    /// `least_loaded` or `round_robin`.
    pub fn parse(text: &str) -> Result<Self, SchedulerError> {
        let bad = || SchedulerError::InvalidPolicy(text.to_string());
        let norm = text.trim().to_ascii_lowercase().replace('-', "_");
        let p = match norm.as_str() {
            "affinity" => Policy::default(),
            "round_robin" => Policy::RoundRobin,
            "least_loaded" => Policy::LeastLoaded,
            "hit_only" => Policy::HitOnly,
            "load_only" => Policy::LoadOnly,
            other => {
                let args = other.strip_prefix("affinity:").ok_or_else(bad)?;
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                Policy::Affinity {
                    alpha: a.trim().parse().map_err(|_| bad())?,
                    beta: b.trim().parse().map_err(|_| bad())?,
                }
            }
        };
        p.validate()?;
        Ok(p)
    }
}

/// Routing-time view of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub node_id: u32,
    pub queue_backlog_tokens: u64,
    pub busy_until: f64,
}

/// Consistent snapshot the scheduler reads at a routing event. Every node's
/// manifest comes from `assignment`.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub assignment: &'a CatalogAssignment,
    pub nodes: &'a [NodeState],
}

impl ClusterView<'_> {
    fn max_backlog(&self) -> u64 {
        self.nodes.iter().map(|n| n.queue_backlog_tokens).max().unwrap_or(0)
    }
}

/// Fraction of `candidates` (catalog indices) cached on `node`.
pub fn estimate_hit(candidates: &[usize], assignment: &CatalogAssignment, node: u32) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let hits = candidates
        .iter()
        .filter(|&&c| assignment.get(c).is_on(node))
        .count();
    hits as f64 / candidates.len() as f64
}

/// Backlog normalized by the cluster maximum (guarded against zero).
pub fn load(node: &NodeState, cluster: &ClusterView<'_>) -> f64 {
    node.queue_backlog_tokens as f64 / cluster.max_backlog().max(1) as f64
}

pub fn affinity(hit: f64, load: f64, alpha: f64, beta: f64) -> f64 {
    alpha * hit + beta * (1.0 - load)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteDecision {
    pub node: u32,
    /// Hit ratio of the request on the chosen node.
    pub hit_ratio: f64,
}

/// Stateful router; only round robin keeps state between requests.
#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: Policy,
    next_rr: u32,
}

impl Scheduler {
    pub fn new(policy: Policy) -> Result<Self, SchedulerError> {
        policy.validate()?;
        Ok(Self { policy, next_rr: 0 })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn route(
        &mut self,
        candidates: &[usize],
        cluster: &ClusterView<'_>,
    ) -> Result<RouteDecision, SchedulerError> {
        let n = cluster.nodes.len();
        if n == 0 {
            return Err(SchedulerError::EmptyCluster);
        }
        let hits = cluster.assignment.hits_per_shard(candidates);
        let denom = candidates.len().max(1) as f64;
        let hit_of = |i: usize| {
            let id = cluster.nodes[i].node_id as usize;
            hits.get(id).map_or(0.0, |&h| h as f64 / denom)
        };
        let idx = match self.policy.weights() {
            Some((alpha, beta)) => {
                let max_b = cluster.max_backlog().max(1) as f64;
                // Scores within a scale-relative tolerance count as ties, so
                // rescaling (alpha, beta) never flips a decision.
                let tol = 1e-12 * (alpha + beta);
                let mut best = 0usize;
                let mut best_score = f64::NEG_INFINITY;
                for i in 0..n {
                    let l = cluster.nodes[i].queue_backlog_tokens as f64 / max_b;
                    let s = affinity(hit_of(i), l, alpha, beta);
                    if s > best_score + tol {
                        best = i;
                        best_score = s;
                    }
                }
                best
            }
            None => match self.policy {
                Policy::LeastLoaded => (0..n)
                    .min_by_key(|&i| (cluster.nodes[i].queue_backlog_tokens, cluster.nodes[i].node_id))
                    .unwrap(),
                _ => {
                    let i = self.next_rr as usize % n;
                    self.next_rr = ((i + 1) % n) as u32;
                    i
                }
            },
        };
        Ok(RouteDecision {
            node: cluster.nodes[idx].node_id,
            hit_ratio: hit_of(idx),
        })
    }
}
