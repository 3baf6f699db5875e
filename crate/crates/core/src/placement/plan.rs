use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::build_similarity_graph;
use super::heat::{compute_heat, split_hot_cold, HeatMap, UsageCorpus};
use super::partition::{kway_partition, PartitionConfig};
use super::PlacementError;
use crate::workload::Catalog;

/// Where an item's KV blocks live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assignment {
    Uncached,
    Shard(u32),
    Replicated,
}

impl Assignment {
    pub fn is_on(self, shard: u32) -> bool {
        match self {
            Assignment::Uncached => false,
            Assignment::Shard(s) => s == shard,
            Assignment::Replicated => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItem {
    pub item_id: String,
    pub token_count: u32,
}

/// Item placement over `k` shards: cold items on exactly one shard, hot
/// items replicated everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPlan {
    pub k: u32,
    pub hot_fraction: f64,
    pub kv_bytes_per_token: u64,
    /// Balance tolerance the cold shards satisfy.
    pub balance_eps: f64,
    pub edge_cut: u64,
    items: Vec<PlanItem>,
    assignment: Vec<Assignment>,
    index: HashMap<String, usize>,
}

impl PlacementPlan {
    fn from_parts(
        header: PlanHeader,
        items: Vec<PlanItem>,
        assignment: Vec<Assignment>,
    ) -> Result<Self, PlacementError> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            if index.insert(it.item_id.clone(), i).is_some() {
                return Err(PlacementError::InvalidPlan(format!(
                    "item {} listed twice",
                    it.item_id
                )));
            }
        }
        Ok(Self {
            k: header.k,
            hot_fraction: header.hot_fraction,
            kv_bytes_per_token: header.kv_bytes_per_token,
            balance_eps: header.balance_eps,
            edge_cut: header.edge_cut,
            items,
            assignment,
            index,
        })
    }

    fn header(&self) -> PlanHeader {
        PlanHeader {
            k: self.k,
            hot_fraction: self.hot_fraction,
            kv_bytes_per_token: self.kv_bytes_per_token,
            balance_eps: self.balance_eps,
            edge_cut: self.edge_cut,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = (&PlanItem, Assignment)> {
        self.items.iter().zip(self.assignment.iter().copied())
    }

    pub fn assignment(&self, item_id: &str) -> Assignment {
        self.index
            .get(item_id)
            .map_or(Assignment::Uncached, |&i| self.assignment[i])
    }

    /// Assignments aligned with `catalog` indices; items the plan does not
    /// know are `Uncached`.
    pub fn for_catalog(&self, catalog: &Catalog) -> CatalogAssignment {
        let assign = catalog.iter().map(|it| self.assignment(&it.item_id)).collect();
        CatalogAssignment { k: self.k, assign }
    }

    pub fn replicated(&self) -> Vec<&str> {
        self.items()
            .filter(|(_, a)| *a == Assignment::Replicated)
            .map(|(it, _)| it.item_id.as_str())
            .collect()
    }

    pub fn cold_items(&self, shard: u32) -> Vec<&str> {
        self.items()
            .filter(|(_, a)| *a == Assignment::Shard(shard))
            .map(|(it, _)| it.item_id.as_str())
            .collect()
    }

    /// Every item cached on `shard`: its cold items plus all replicas.
    pub fn shard_items(&self, shard: u32) -> Vec<&str> {
        self.items()
            .filter(|(_, a)| a.is_on(shard))
            .map(|(it, _)| it.item_id.as_str())
            .collect()
    }

    pub fn cold_tokens(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.k as usize];
        for (it, a) in self.items() {
            if let Assignment::Shard(s) = a {
                t[s as usize] += it.token_count as u64;
            }
        }
        t
    }

    pub fn replicated_tokens(&self) -> u64 {
        self.items()
            .filter(|(_, a)| *a == Assignment::Replicated)
            .map(|(it, _)| it.token_count as u64)
            .sum()
    }

    /// Cached tokens per shard, replicas included.
    pub fn shard_tokens(&self) -> Vec<u64> {
        let rep = self.replicated_tokens();
        self.cold_tokens().into_iter().map(|c| c + rep).collect()
    }

    /// Checks coverage and the cold-token balance bound.
    pub fn validate(&self) -> Result<(), PlacementError> {
        for (it, a) in self.items() {
            if let Assignment::Shard(s) = a {
                if s >= self.k {
                    return Err(PlacementError::InvalidPlan(format!(
                        "item {} on shard {s} of {}",
                        it.item_id, self.k
                    )));
                }
            }
        }
        let cold = self.cold_tokens();
        let total: u64 = cold.iter().sum();
        let cap = (1.0 + self.balance_eps) * total as f64 / self.k as f64 + 1e-9;
        if let Some((s, &t)) = cold.iter().enumerate().find(|(_, &t)| t as f64 > cap) {
            return Err(PlacementError::InvalidPlan(format!(
                "shard {s} holds {t} cold tokens, cap {cap:.1}"
            )));
        }
        Ok(())
    }
}

/// Plan assignments indexed like a catalog, for the online path.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogAssignment {
    pub k: u32,
    pub assign: Vec<Assignment>,
}

impl CatalogAssignment {
    /// Everything uncached: the state of an empty item cache.
    pub fn uncached(k: u32, n_items: usize) -> Self {
        Self {
            k,
            assign: vec![Assignment::Uncached; n_items],
        }
    }

    pub fn get(&self, idx: usize) -> Assignment {
        self.assign[idx]
    }

    /// Number of `candidates` (catalog indices) cached on each shard.
    pub fn hits_per_shard(&self, candidates: &[usize]) -> Vec<u32> {
        let mut hits = vec![0u32; self.k as usize];
        let mut replicated = 0;
        for &c in candidates {
            match self.assign[c] {
                Assignment::Uncached => {}
                Assignment::Shard(s) => hits[s as usize] += 1,
                Assignment::Replicated => replicated += 1,
            }
        }
        for h in &mut hits {
            *h += replicated;
        }
        hits
    }

    /// Best single-shard fraction of `candidates` already cached.
    pub fn best_hit_ratio(&self, candidates: &[usize]) -> f64 {
        if candidates.is_empty() {
            return 0.0;
        }
        let best = self.hits_per_shard(candidates).into_iter().max().unwrap_or(0);
        best as f64 / candidates.len() as f64
    }
}

fn assemble(
    catalog: &Catalog,
    hot: &[usize],
    cold: &[usize],
    parts: &[u32],
    cfg: &PartitionConfig,
    balance_eps: f64,
    edge_cut: u64,
) -> Result<PlacementPlan, PlacementError> {
    let mut assignment = vec![Assignment::Uncached; catalog.len()];
    for &h in hot {
        assignment[h] = Assignment::Replicated;
    }
    for (v, &i) in cold.iter().enumerate() {
        assignment[i] = Assignment::Shard(parts[v]);
    }
    let items = catalog
        .iter()
        .map(|it| PlanItem {
            item_id: it.item_id.clone(),
            token_count: it.token_count,
        })
        .collect();
    let header = PlanHeader {
        k: cfg.k,
        hot_fraction: cfg.hot_fraction,
        kv_bytes_per_token: cfg.kv_bytes_per_token,
        balance_eps,
        edge_cut,
    };
    PlacementPlan::from_parts(header, items, assignment)
}

/// Similarity-aware placement: heat, hot replication, co-occurrence graph,
/// k-way partition of the cold items.
pub fn place_items(
    catalog: &Catalog,
    usage: UsageCorpus<'_>,
    cfg: &PartitionConfig,
) -> Result<PlacementPlan, PlacementError> {
    let heat = compute_heat(catalog, usage);
    place_with_heat(catalog, usage, &heat, cfg)
}

pub fn place_with_heat(
    catalog: &Catalog,
    usage: UsageCorpus<'_>,
    heat: &HeatMap,
    cfg: &PartitionConfig,
) -> Result<PlacementPlan, PlacementError> {
    cfg.validate()?;
    if usage.is_empty() {
        log::warn!("placement usage corpus is empty; heat is zero everywhere");
    }
    let split = split_hot_cold(catalog, heat, cfg.hot_fraction);
    let graph = build_similarity_graph(catalog, usage, heat, &split, cfg.k);
    let mut base_heat = vec![0.0; cfg.k as usize];
    for r in &graph.replicas {
        base_heat[r.instance as usize] += r.heat;
    }
    let part = kway_partition(&graph.csr, cfg.k as usize, cfg, &base_heat)?;
    log::info!(
        "placed {} cold items ({} edges, cut {}) and {} replicated items on {} shards",
        graph.cold.len(),
        graph.csr.n_edges(),
        part.edge_cut,
        split.hot.len(),
        cfg.k
    );
    let plan = assemble(
        catalog,
        &split.hot,
        &split.cold,
        &part.parts,
        cfg,
        part.effective_eps,
        part.edge_cut,
    )?;
    plan.validate()?;
    Ok(plan)
}

/// Baseline with the same hot replication but cold items dealt out in a
/// seeded random order, each to the currently lightest shard.
pub fn random_placement(
    catalog: &Catalog,
    usage: UsageCorpus<'_>,
    cfg: &PartitionConfig,
    seed: u64,
) -> Result<PlacementPlan, PlacementError> {
    cfg.validate()?;
    let heat = compute_heat(catalog, usage);
    let split = split_hot_cold(catalog, &heat, cfg.hot_fraction);
    let k = cfg.k as usize;
    if split.cold.len() < k {
        return Err(PlacementError::TooFewNodes {
            k,
            nodes: split.cold.len(),
        });
    }
    let mut order: Vec<usize> = (0..split.cold.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut loads = vec![0u64; k];
    let mut parts = vec![0u32; split.cold.len()];
    for v in order {
        let p = (0..k).min_by_key(|&p| (loads[p], p)).unwrap();
        parts[v] = p as u32;
        loads[p] += catalog.item(split.cold[v]).token_count as u64;
    }
    let mean = loads.iter().sum::<u64>() as f64 / k as f64;
    let worst = loads.iter().copied().max().unwrap_or(0) as f64;
    let eps = if mean > 0.0 {
        (worst / mean - 1.0).max(cfg.balance_eps)
    } else {
        cfg.balance_eps
    };
    assemble(catalog, &split.hot, &split.cold, &parts, cfg, eps, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardFootprint {
    pub shard: u32,
    pub tokens: u64,
    pub bytes: u64,
}

/// Cached tokens and bytes per shard.
pub fn footprint(plan: &PlacementPlan, kv_bytes_per_token: u64) -> Vec<ShardFootprint> {
    plan.shard_tokens()
        .into_iter()
        .enumerate()
        .map(|(s, tokens)| ShardFootprint {
            shard: s as u32,
            tokens,
            bytes: tokens * kv_bytes_per_token,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMove {
    pub item_id: String,
    pub from: u32,
    pub to: u32,
}

/// Differences between two plans, after aligning shard labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDiff {
    pub moved: Vec<ItemMove>,
    pub newly_replicated: Vec<String>,
    pub no_longer_replicated: Vec<String>,
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

impl PlanDiff {
    pub fn is_empty(&self) -> bool {
        self.moved.is_empty()
            && self.newly_replicated.is_empty()
            && self.no_longer_replicated.is_empty()
            && self.added.is_empty()
            && self.removed.is_empty()
    }

    pub fn between(old: &PlacementPlan, new: &PlacementPlan) -> PlanDiff {
        let mut d = PlanDiff::default();
        for (it, a) in new.items() {
            match (old.assignment(&it.item_id), a) {
                (Assignment::Uncached, Assignment::Uncached) => {}
                (Assignment::Uncached, _) => d.added.push(it.item_id.clone()),
                (Assignment::Shard(_), Assignment::Replicated) => {
                    d.newly_replicated.push(it.item_id.clone())
                }
                (Assignment::Replicated, Assignment::Shard(_)) => {
                    d.no_longer_replicated.push(it.item_id.clone())
                }
                (Assignment::Shard(f), Assignment::Shard(t)) if f != t => d.moved.push(ItemMove {
                    item_id: it.item_id.clone(),
                    from: f,
                    to: t,
                }),
                _ => {}
            }
        }
        for (it, a) in old.items() {
            if a != Assignment::Uncached && new.assignment(&it.item_id) == Assignment::Uncached {
                d.removed.push(it.item_id.clone());
            }
        }
        d
    }
}

/// Renumbers `new`'s shards to overlap `old`'s as much as possible (greedy
/// on shared cold tokens), so a refresh reports real moves only.
fn align_labels(old: &PlacementPlan, new: &mut PlacementPlan) {
    if old.k != new.k {
        return;
    }
    let k = new.k as usize;
    let mut overlap = vec![vec![0u64; k]; k];
    for (it, a) in new.items() {
        if let (Assignment::Shard(n), Assignment::Shard(o)) = (a, old.assignment(&it.item_id)) {
            overlap[o as usize][n as usize] += it.token_count as u64;
        }
    }
    let mut pairs: Vec<(u64, usize, usize)> = Vec::with_capacity(k * k);
    for (o, row) in overlap.iter().enumerate() {
        for (n, &w) in row.iter().enumerate() {
            pairs.push((w, o, n));
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut relabel = vec![u32::MAX; k];
    let mut used = vec![false; k];
    for (_, o, n) in pairs {
        if relabel[n] == u32::MAX && !used[o] {
            relabel[n] = o as u32;
            used[o] = true;
        }
    }
    for a in &mut new.assignment {
        if let Assignment::Shard(s) = a {
            *s = relabel[*s as usize];
        }
    }
}

/// Recomputes heat on `usage` and places again. Shard labels are aligned to
/// `old` before diffing.
pub fn refresh_placement(
    old: &PlacementPlan,
    catalog: &Catalog,
    usage: UsageCorpus<'_>,
    cfg: &PartitionConfig,
) -> Result<(PlacementPlan, PlanDiff), PlacementError> {
    let mut plan = place_items(catalog, usage, cfg)?;
    align_labels(old, &mut plan);
    let diff = PlanDiff::between(old, &plan);
    Ok((plan, diff))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PlanHeader {
    k: u32,
    hot_fraction: f64,
    kv_bytes_per_token: u64,
    balance_eps: f64,
    edge_cut: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    plan: PlanHeader,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplicatedLine {
    replicated: Vec<PlanItem>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShardLine {
    shard: u32,
    tokens: u64,
    cold_tokens: u64,
    items: Vec<PlanItem>,
}

fn io_err(e: impl std::fmt::Display) -> PlacementError {
    PlacementError::Io(e.to_string())
}

fn json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), PlacementError> {
    serde_json::to_writer(&mut *w, value).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)
}

/// Writes the plan as JSON lines: header, replicated set, one manifest per
/// shard.
pub fn write_plan<W: Write>(mut w: W, plan: &PlacementPlan) -> Result<(), PlacementError> {
    json_line(
        &mut w,
        &HeaderLine {
            plan: plan.header(),
        },
    )?;
    let collect = |pred: &dyn Fn(Assignment) -> bool| -> Vec<PlanItem> {
        plan.items()
            .filter(|(_, a)| pred(*a))
            .map(|(it, _)| it.clone())
            .collect()
    };
    json_line(
        &mut w,
        &ReplicatedLine {
            replicated: collect(&|a| a == Assignment::Replicated),
        },
    )?;
    let cold = plan.cold_tokens();
    let rep = plan.replicated_tokens();
    for s in 0..plan.k {
        json_line(
            &mut w,
            &ShardLine {
                shard: s,
                tokens: cold[s as usize] + rep,
                cold_tokens: cold[s as usize],
                items: collect(&|a| a == Assignment::Shard(s)),
            },
        )?;
    }
    w.flush().map_err(io_err)
}

pub fn read_plan<R: BufRead>(reader: R) -> Result<PlacementPlan, PlacementError> {
    let mut lines = Vec::new();
    for (i, l) in reader.lines().enumerate() {
        let l = l.map_err(io_err)?;
        if !l.trim().is_empty() {
            lines.push((i + 1, l));
        }
    }
    let parse_err = |line: usize, e: serde_json::Error| PlacementError::Parse {
        line,
        message: e.to_string(),
    };
    let mut it = lines.into_iter();
    let (ln, text) = it
        .next()
        .ok_or_else(|| PlacementError::InvalidPlan("plan file is empty".into()))?;
    let header: HeaderLine = serde_json::from_str(&text).map_err(|e| parse_err(ln, e))?;
    let header = header.plan;
    if header.k == 0 {
        return Err(PlacementError::InvalidPlan("k must be at least 1".into()));
    }
    let (ln, text) = it
        .next()
        .ok_or_else(|| PlacementError::InvalidPlan("missing replicated line".into()))?;
    let rep: ReplicatedLine = serde_json::from_str(&text).map_err(|e| parse_err(ln, e))?;
    let mut items = Vec::new();
    let mut assignment = Vec::new();
    for item in rep.replicated {
        items.push(item);
        assignment.push(Assignment::Replicated);
    }
    let rep_tokens: u64 = items.iter().map(|i| i.token_count as u64).sum();
    let mut seen = vec![false; header.k as usize];
    for (ln, text) in it {
        let shard: ShardLine = serde_json::from_str(&text).map_err(|e| parse_err(ln, e))?;
        if shard.shard >= header.k || seen[shard.shard as usize] {
            return Err(PlacementError::Parse {
                line: ln,
                message: format!("unexpected shard {}", shard.shard),
            });
        }
        seen[shard.shard as usize] = true;
        let cold: u64 = shard.items.iter().map(|i| i.token_count as u64).sum();
        if cold != shard.cold_tokens || cold + rep_tokens != shard.tokens {
            return Err(PlacementError::Parse {
                line: ln,
                message: format!("token totals of shard {} do not match its items", shard.shard),
            });
        }
        for item in shard.items {
            items.push(item);
            assignment.push(Assignment::Shard(shard.shard));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(PlacementError::InvalidPlan(format!("shard {missing} missing")));
    }
    PlacementPlan::from_parts(header, items, assignment)
}

pub fn save_plan(path: impl AsRef<std::path::Path>, plan: &PlacementPlan) -> Result<(), PlacementError> {
    let f = std::fs::File::create(path.as_ref()).map_err(io_err)?;
    write_plan(std::io::BufWriter::new(f), plan)
}

pub fn load_plan(path: impl AsRef<std::path::Path>) -> Result<PlacementPlan, PlacementError> {
    let f = std::fs::File::open(path.as_ref()).map_err(io_err)?;
    read_plan(std::io::BufReader::new(f))
}
