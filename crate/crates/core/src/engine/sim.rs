use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::breakdown::{classify_tokens, EngineMode, NodeContext, RecomputeBreakdown, RecomputePolicy};
use super::cost::{prefill_latency, CostModel};
use super::EngineError;
use crate::placement::CatalogAssignment;
use crate::scheduler::{estimate_hit, ClusterView, NodeState, Policy, RouteDecision, Scheduler};
use crate::semlib::{Embedder, Matcher, PrototypeLibrary};
use crate::workload::{decompose_prompt, Catalog, Trace};

/// Everything a run reads but never mutates.
#[derive(Debug, Clone, Copy)]
pub struct SimInput<'a> {
    pub trace: &'a Trace,
    pub catalog: &'a Catalog,
    pub assignment: &'a CatalogAssignment,
    /// Prototype matches for history tokens; `None` means no library.
    pub history: Option<&'a HistoryMatches>,
}

/// Best prototype cosine of every history token of a trace, indexed by
/// request, review and token. The library is one shared instance standing
/// in for identical copies on every node, so matches do not depend on
/// routing and can be computed once per trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryMatches {
    cosines: Vec<Vec<Vec<f64>>>,
}

impl HistoryMatches {
    /// Positions restart at 0 for every review.
    pub fn compute(trace: &Trace, lib: &PrototypeLibrary, emb: &Embedder) -> Result<Self, EngineError> {
        let mut m = Matcher::new(lib, emb)?;
        let cosines = trace
            .requests
            .iter()
            .map(|req| {
                req.history
                    .iter()
                    .map(|h| {
                        h.token_ids
                            .iter()
                            .enumerate()
                            .map(|(pos, &t)| Ok(m.best(t, pos as u32)?.1))
                            .collect::<Result<Vec<f64>, EngineError>>()
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { cosines })
    }

    pub fn request(&self, ordinal: usize) -> &[Vec<f64>] {
        &self.cosines[ordinal]
    }

    fn check(&self, trace: &Trace) -> Result<(), EngineError> {
        let fits = self.cosines.len() == trace.len()
            && self.cosines.iter().zip(&trace.requests).all(|(c, r)| {
                c.len() == r.history.len() && c.iter().zip(&r.history).all(|(x, h)| x.len() == h.token_ids.len())
            });
        if fits {
            Ok(())
        } else {
            Err(EngineError::DimensionMismatch("history matches do not fit the trace".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: EngineMode,
    pub cost: CostModel,
    pub recompute: RecomputePolicy,
    /// Fetch items cached on other nodes over the network instead of
    /// recomputing them.
    pub remote_fetch: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: EngineMode::RcLlm,
            cost: CostModel::default(),
            recompute: RecomputePolicy::default(),
            remote_fetch: false,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.cost.validate()?;
        self.recompute.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub request_id: String,
    pub routed_node: u32,
    pub arrival: f64,
    pub enqueue: f64,
    pub start: f64,
    pub finish: f64,
    pub ttft: f64,
    pub service: f64,
    /// Fraction of candidates cached on the routed node.
    pub hit_ratio: f64,
    pub breakdown: RecomputeBreakdown,
    pub mode: String,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: EngineMode,
    pub policy: Policy,
    pub seed: u64,
    pub k: u32,
    pub n_requests: usize,
    pub trace_source: String,
    pub trace_qps: f64,
    pub trace_seed: u64,
    /// Mode of the run whose routing decisions were replayed, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replayed_from: Option<EngineMode>,
    pub engine: EngineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub meta: RunMeta,
    pub records: Vec<RunRecord>,
}

struct Node {
    busy_until: f64,
    /// (finish time, prompt tokens) of requests not yet finished, FIFO.
    pending: VecDeque<(f64, u64)>,
    backlog: u64,
    last_instruction: Option<u32>,
}

/// Runs the trace through a cluster of `assignment.k` instances. Each
/// arrival is routed, joins its node's FIFO queue and is served for its
/// prefill latency; TTFT is arrival to prefill completion.
pub fn simulate(input: SimInput<'_>, policy: Policy, cfg: &EngineConfig) -> Result<Run, EngineError> {
    let mut scheduler = Scheduler::new(policy)?;
    let mut route = |_: usize, cands: &[usize], view: &ClusterView<'_>| Ok(scheduler.route(cands, view)?);
    run_loop(input, cfg, &mut route, policy, policy.label(), None)
}

/// Runs the trace with every request pinned to the node `reference` sent it
/// to. Holding routing fixed isolates the effect of the engine mode.
pub fn replay(input: SimInput<'_>, reference: &Run, cfg: &EngineConfig) -> Result<Run, EngineError> {
    let trace = input.trace;
    if reference.records.len() != trace.len()
        || reference
            .records
            .iter()
            .zip(&trace.requests)
            .any(|(r, q)| r.request_id != q.request_id)
    {
        return Err(EngineError::InvalidConfig(
            "reference run does not cover the same requests".into(),
        ));
    }
    if reference.meta.k != input.assignment.k {
        return Err(EngineError::InvalidConfig(format!(
            "reference run has {} nodes, assignment has {}",
            reference.meta.k, input.assignment.k
        )));
    }
    let mut route = |i: usize, cands: &[usize], view: &ClusterView<'_>| {
        let node = reference.records[i].routed_node;
        Ok(RouteDecision {
            node,
            hit_ratio: estimate_hit(cands, view.assignment, node),
        })
    };
    let label = format!("replay({})", reference.meta.policy.label());
    run_loop(input, cfg, &mut route, reference.meta.policy, label, Some(reference.meta.mode))
}

type Router<'r> = dyn FnMut(usize, &[usize], &ClusterView<'_>) -> Result<RouteDecision, EngineError> + 'r;

fn run_loop(
    input: SimInput<'_>,
    cfg: &EngineConfig,
    route: &mut Router<'_>,
    policy: Policy,
    policy_label: String,
    replayed_from: Option<EngineMode>,
) -> Result<Run, EngineError> {
    cfg.validate()?;
    let k = input.assignment.k;
    if k == 0 {
        return Err(EngineError::InvalidConfig("cluster needs at least one node".into()));
    }
    if input.assignment.assign.len() != input.catalog.len() {
        return Err(EngineError::InvalidConfig(format!(
            "assignment covers {} items, catalog has {}",
            input.assignment.assign.len(),
            input.catalog.len()
        )));
    }
    if let Some(h) = input.history {
        h.check(input.trace)?;
    }
    let mut nodes: Vec<Node> = (0..k)
        .map(|_| Node {
            busy_until: 0.0,
            pending: VecDeque::new(),
            backlog: 0,
            last_instruction: None,
        })
        .collect();
    let mode_label = cfg.mode.label().to_string();
    let mut records = Vec::with_capacity(input.trace.len());
    let mut states: Vec<NodeState> = Vec::with_capacity(k as usize);

    for (ordinal, req) in input.trace.requests.iter().enumerate() {
        let now = req.arrival_time;
        for node in &mut nodes {
            while node.pending.front().is_some_and(|&(f, _)| f <= now) {
                let (_, tokens) = node.pending.pop_front().unwrap();
                node.backlog -= tokens;
            }
        }
        let layout = decompose_prompt(req, input.catalog, req.instruction_tokens)?;
        let candidates: Vec<usize> = layout
            .segments
            .iter()
            .filter_map(|s| match s.source {
                crate::workload::SegmentSource::Item(i) => Some(i),
                _ => None,
            })
            .collect();

        states.clear();
        states.extend(nodes.iter().enumerate().map(|(i, n)| NodeState {
            node_id: i as u32,
            queue_backlog_tokens: n.backlog,
            busy_until: n.busy_until,
        }));
        let view = ClusterView {
            assignment: input.assignment,
            nodes: &states,
        };
        let decision = route(ordinal, &candidates, &view)?;
        if decision.node >= k {
            return Err(EngineError::InvalidConfig(format!("route to missing node {}", decision.node)));
        }
        let n_id = decision.node as usize;

        let thr = cfg.recompute.match_threshold;
        let history_matched: Vec<Vec<bool>> = match input.history {
            Some(h) => h
                .request(ordinal)
                .iter()
                .map(|c| c.iter().map(|&x| x >= thr).collect())
                .collect(),
            None => req.history.iter().map(|h| vec![false; h.token_ids.len()]).collect(),
        };
        let ctx = NodeContext {
            node: decision.node,
            assignment: input.assignment,
            prefix_warm: nodes[n_id].last_instruction == Some(req.instruction_tokens),
            remote_fetch: cfg.remote_fetch,
            kv_bytes_per_token: cfg.cost.kv_bytes_per_token,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(ordinal as u64);
        let breakdown = classify_tokens(&layout, &ctx, &history_matched, cfg.mode, &cfg.recompute, &mut rng);
        let service = prefill_latency(&breakdown, &cfg.cost);

        let node = &mut nodes[n_id];
        let start = now.max(node.busy_until);
        let finish = start + service;
        node.busy_until = finish;
        node.pending.push_back((finish, breakdown.total_tokens));
        node.backlog += breakdown.total_tokens;
        node.last_instruction = Some(req.instruction_tokens);

        records.push(RunRecord {
            request_id: req.request_id.clone(),
            routed_node: decision.node,
            arrival: now,
            enqueue: now,
            start,
            finish,
            ttft: (start - now) + service,
            service,
            hit_ratio: decision.hit_ratio,
            breakdown,
            mode: mode_label.clone(),
            policy: policy_label.clone(),
        });
    }

    Ok(Run {
        meta: RunMeta {
            mode: cfg.mode,
            policy,
            seed: cfg.seed,
            k,
            n_requests: records.len(),
            trace_source: input.trace.meta.source.clone(),
            trace_qps: input.trace.meta.qps,
            trace_seed: input.trace.meta.seed,
            replayed_from,
            engine: cfg.clone(),
        },
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    run_meta: RunMeta,
}

fn io_err(e: impl std::fmt::Display) -> EngineError {
    EngineError::Io(e.to_string())
}

fn json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), EngineError> {
    serde_json::to_writer(&mut *w, value).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)
}

/// JSON lines: a `run_meta` header, then one record per request.
pub fn write_run<W: Write>(mut w: W, run: &Run) -> Result<(), EngineError> {
    json_line(
        &mut w,
        &MetaLine {
            run_meta: run.meta.clone(),
        },
    )?;
    for r in &run.records {
        json_line(&mut w, r)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_run<R: BufRead>(reader: R) -> Result<Run, EngineError> {
    let mut meta: Option<RunMeta> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| EngineError::Parse {
            line: i + 1,
            message: e.to_string(),
        };
        match meta {
            None => meta = Some(serde_json::from_str::<MetaLine>(&line).map_err(parse_err)?.run_meta),
            Some(_) => records.push(serde_json::from_str::<RunRecord>(&line).map_err(parse_err)?),
        }
    }
    let meta = meta.ok_or_else(|| EngineError::Parse {
        line: 0,
        message: "run file is empty".into(),
    })?;
    if meta.n_requests != records.len() {
        return Err(EngineError::Parse {
            line: 0,
            message: format!("header lists {} requests, file has {}", meta.n_requests, records.len()),
        });
    }
    Ok(Run { meta, records })
}

pub fn save_run(path: impl AsRef<Path>, run: &Run) -> Result<(), EngineError> {
    write_run(BufWriter::new(File::create(path).map_err(io_err)?), run)
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Run, EngineError> {
    read_run(BufReader::new(File::open(path).map_err(io_err)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::Assignment;
    use crate::workload::{ItemRecord, Request, TraceMeta};

    fn catalog() -> Catalog {
        let mut cat = Catalog::new();
        for i in 0..4 {
            cat.insert(ItemRecord {
                item_id: format!("i{i}"),
                token_count: 100,
                category: "c".into(),
            })
            .unwrap();
        }
        cat
    }

    fn trace(arrivals: &[f64]) -> Trace {
        let requests = arrivals
            .iter()
            .enumerate()
            .map(|(i, &t)| Request {
                request_id: format!("r{i}"),
                arrival_time: t,
                instruction_tokens: 200,
                history: vec![],
                candidates: vec!["i0".into(), "i1".into(), "i2".into()],
            })
            .collect();
        Trace::new(
            TraceMeta {
                source: "test".into(),
                qps: 1.0,
                seed: 0,
            },
            requests,
        )
        .unwrap()
    }

    fn assignment(k: u32) -> CatalogAssignment {
        CatalogAssignment {
            k,
            assign: vec![Assignment::Shard(0), Assignment::Shard(0), Assignment::Uncached, Assignment::Shard(0)],
        }
    }

    #[test]
    fn idle_node_ttft_is_service_time() {
        let (cat, t, asg) = (catalog(), trace(&[1.5]), assignment(1));
        let input = SimInput {
            trace: &t,
            catalog: &cat,
            assignment: &asg,
            history: None,
        };
        let run = simulate(input, Policy::default(), &EngineConfig::default()).unwrap();
        let r = &run.records[0];
        assert_eq!(r.ttft, prefill_latency(&r.breakdown, &CostModel::default()));
        assert_eq!((r.start, r.finish), (1.5, 1.5 + r.ttft));
        assert!((r.hit_ratio - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_arrivals_queue_fifo() {
        let (cat, t, asg) = (catalog(), trace(&[0.0, 0.0]), assignment(1));
        let input = SimInput {
            trace: &t,
            catalog: &cat,
            assignment: &asg,
            history: None,
        };
        let cfg = EngineConfig {
            mode: EngineMode::FullRecompute,
            ..EngineConfig::default()
        };
        let run = simulate(input, Policy::RoundRobin, &cfg).unwrap();
        let (a, b) = (&run.records[0], &run.records[1]);
        assert_eq!(b.start, a.finish);
        assert_eq!(b.ttft, a.service + b.service);
        for r in &run.records {
            assert!(r.finish >= r.start && r.start >= r.arrival);
            assert!((r.ttft - (r.finish - r.arrival)).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_warms_after_first_request() {
        let (cat, t, asg) = (catalog(), trace(&[0.0, 10.0]), assignment(1));
        let input = SimInput {
            trace: &t,
            catalog: &cat,
            assignment: &asg,
            history: None,
        };
        let cfg = EngineConfig {
            mode: EngineMode::PrefixCache,
            ..EngineConfig::default()
        };
        let run = simulate(input, Policy::default(), &cfg).unwrap();
        assert_eq!(run.records[0].breakdown.prefix_reused_tokens, 0);
        assert_eq!(run.records[1].breakdown.prefix_reused_tokens, 200);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (cat, t, asg) = (catalog(), trace(&[0.0, 0.1, 0.1, 0.3, 2.0]), assignment(2));
        let input = SimInput {
            trace: &t,
            catalog: &cat,
            assignment: &asg,
            history: None,
        };
        let cfg = EngineConfig {
            seed: 11,
            ..EngineConfig::default()
        };
        let a = simulate(input, Policy::default(), &cfg).unwrap();
        let b = simulate(input, Policy::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_run(&mut buf, &a).unwrap();
        let back = read_run(buf.as_slice()).unwrap();
        assert_eq!(back, a);
        let mut again = Vec::new();
        write_run(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        assert!(read_run(&buf[..buf.iter().position(|&c| c == b'\n').unwrap() + 1]).is_err());
    }

    #[test]
    fn replay_follows_reference_routes() {
        let (cat, t, asg) = (catalog(), trace(&[0.0, 0.0, 0.0, 0.5]), assignment(3));
        let input = SimInput {
            trace: &t,
            catalog: &cat,
            assignment: &asg,
            history: None,
        };
        let reference = simulate(input, Policy::RoundRobin, &EngineConfig::default()).unwrap();
        let cfg = EngineConfig {
            mode: EngineMode::PrefixCache,
            ..EngineConfig::default()
        };
        let rerun = replay(input, &reference, &cfg).unwrap();
        let nodes = |r: &Run| r.records.iter().map(|x| x.routed_node).collect::<Vec<_>>();
        assert_eq!(nodes(&rerun), nodes(&reference));
        assert_eq!(rerun.meta.replayed_from, Some(EngineMode::RcLlm));
        let short = trace(&[0.0]);
        let other = SimInput { trace: &short, ..input };
        assert!(replay(other, &reference, &cfg).is_err());
    }

    #[test]
    fn rejects_mismatched_assignment() {
        let (cat, t) = (catalog(), trace(&[0.0]));
        let asg = CatalogAssignment::uncached(2, 3);
        let input = SimInput {
            trace: &t,
            catalog: &cat,
            assignment: &asg,
            history: None,
        };
        assert!(matches!(
            simulate(input, Policy::default(), &EngineConfig::default()),
            Err(EngineError::InvalidConfig(_))
        ));
    }
}
