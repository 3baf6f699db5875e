use std::collections::HashMap;

use super::heat::{HeatMap, HotCold, UsageCorpus};
use crate::workload::Catalog;

/// Undirected weighted graph in compressed sparse row form. Every vertex
/// carries a size (cached tokens) and a heat (access count).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrGraph {
    pub xadj: Vec<usize>,
    pub adjncy: Vec<u32>,
    pub adjwgt: Vec<u64>,
    pub vsize: Vec<u64>,
    pub vheat: Vec<f64>,
}

impl CsrGraph {
    /// Builds a graph from an edge list. Duplicate edges (in either
    /// direction) are summed; self-loops and zero weights are dropped.
    pub fn from_edges(vsize: Vec<u64>, vheat: Vec<f64>, edges: &[(u32, u32, u64)]) -> Self {
        let n = vsize.len();
        assert_eq!(n, vheat.len());
        let mut merged: HashMap<(u32, u32), u64> = HashMap::with_capacity(edges.len());
        for &(u, v, w) in edges {
            if u == v || w == 0 {
                continue;
            }
            let key = if u < v { (u, v) } else { (v, u) };
            *merged.entry(key).or_default() += w;
        }
        let mut degree = vec![0usize; n];
        for &(u, v) in merged.keys() {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut xadj = vec![0usize; n + 1];
        for i in 0..n {
            xadj[i + 1] = xadj[i] + degree[i];
        }
        let mut fill = xadj.clone();
        let mut adjncy = vec![0u32; xadj[n]];
        let mut adjwgt = vec![0u64; xadj[n]];
        for (&(u, v), &w) in &merged {
            for (a, b) in [(u, v), (v, u)] {
                let slot = fill[a as usize];
                adjncy[slot] = b;
                adjwgt[slot] = w;
                fill[a as usize] += 1;
            }
        }
        // Sort each adjacency list so the layout does not depend on hash order.
        for i in 0..n {
            let (lo, hi) = (xadj[i], xadj[i + 1]);
            let mut pairs: Vec<(u32, u64)> = adjncy[lo..hi]
                .iter()
                .copied()
                .zip(adjwgt[lo..hi].iter().copied())
                .collect();
            pairs.sort_unstable();
            for (k, (a, w)) in pairs.into_iter().enumerate() {
                adjncy[lo + k] = a;
                adjwgt[lo + k] = w;
            }
        }
        Self {
            xadj,
            adjncy,
            adjwgt,
            vsize,
            vheat,
        }
    }

    pub fn n(&self) -> usize {
        self.vsize.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjncy.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let (lo, hi) = (self.xadj[v], self.xadj[v + 1]);
        self.adjncy[lo..hi]
            .iter()
            .zip(&self.adjwgt[lo..hi])
            .map(|(&u, &w)| (u as usize, w))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.xadj[v + 1] - self.xadj[v]
    }

    pub fn total_size(&self) -> u64 {
        self.vsize.iter().sum()
    }

    pub fn total_heat(&self) -> f64 {
        self.vheat.iter().sum()
    }

    pub fn total_edge_weight(&self) -> u64 {
        self.adjwgt.iter().sum::<u64>() / 2
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> u64 {
        self.neighbors(u).find(|&(x, _)| x == v).map_or(0, |(_, w)| w)
    }

    /// Total weight of edges whose endpoints lie in different parts.
    pub fn edge_cut(&self, parts: &[u32]) -> u64 {
        let mut cut = 0;
        for v in 0..self.n() {
            for (u, w) in self.neighbors(v) {
                if u > v && parts[u] != parts[v] {
                    cut += w;
                }
            }
        }
        cut
    }
}

/// A hot item's copy pinned to one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaNode {
    pub item: usize,
    pub instance: u32,
    pub heat: f64,
    pub size: u64,
}

/// Similarity graph over cold items plus edge-free replica nodes. Vertex `v`
/// of `csr` is catalog item `cold[v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemGraph {
    pub k: u32,
    pub replicas: Vec<ReplicaNode>,
    pub cold: Vec<usize>,
    pub csr: CsrGraph,
}

impl ItemGraph {
    pub fn n_nodes(&self) -> usize {
        self.replicas.len() + self.cold.len()
    }
}

/// Builds the co-occurrence graph. Two cold items gain one unit of edge
/// weight per request that lists both (as candidates or adjacent history
/// entries) and per user whose timestamp-ordered reviews place them next to
/// each other.
pub fn build_similarity_graph(
    catalog: &Catalog,
    usage: UsageCorpus<'_>,
    heat: &HeatMap,
    split: &HotCold,
    k: u32,
) -> ItemGraph {
    const NONE: u32 = u32::MAX;
    let mut pos = vec![NONE; catalog.len()];
    for (v, &item) in split.cold.iter().enumerate() {
        pos[item] = v as u32;
    }
    let lookup = |id: &str| catalog.index_of(id).map(|i| pos[i]).filter(|&p| p != NONE);

    let mut edges: Vec<(u32, u32, u64)> = Vec::new();
    let mut group: Vec<(u32, u32)> = Vec::new();
    let flush = |group: &mut Vec<(u32, u32)>, edges: &mut Vec<(u32, u32, u64)>| {
        group.sort_unstable();
        group.dedup();
        edges.extend(group.drain(..).map(|(a, b)| (a, b, 1)));
    };
    let ordered = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };

    for t in usage.traces {
        for req in &t.requests {
            let cands: Vec<u32> = req.candidates.iter().filter_map(|c| lookup(c)).collect();
            for (x, &a) in cands.iter().enumerate() {
                for &b in &cands[x + 1..] {
                    group.push(ordered(a, b));
                }
            }
            let hist: Vec<Option<u32>> = req.history.iter().map(|h| lookup(&h.item_id)).collect();
            for w in hist.windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    if a != b {
                        group.push(ordered(a, b));
                    }
                }
            }
            flush(&mut group, &mut edges);
        }
    }

    let mut by_user: Vec<usize> = (0..usage.reviews.len()).collect();
    by_user.sort_by(|&a, &b| {
        let (ra, rb) = (&usage.reviews[a], &usage.reviews[b]);
        ra.user_id
            .cmp(&rb.user_id)
            .then(ra.timestamp.cmp(&rb.timestamp))
            .then(a.cmp(&b))
    });
    for w in by_user.windows(2) {
        let (ra, rb) = (&usage.reviews[w[0]], &usage.reviews[w[1]]);
        if ra.user_id != rb.user_id {
            flush(&mut group, &mut edges);
            continue;
        }
        if let (Some(a), Some(b)) = (lookup(&ra.item_id), lookup(&rb.item_id)) {
            if a != b {
                group.push(ordered(a, b));
            }
        }
    }
    flush(&mut group, &mut edges);

    let vsize = split
        .cold
        .iter()
        .map(|&i| catalog.item(i).token_count as u64)
        .collect();
    let vheat = split.cold.iter().map(|&i| heat.get(i) as f64).collect();
    let csr = CsrGraph::from_edges(vsize, vheat, &edges);

    let mut replicas = Vec::with_capacity(split.hot.len() * k as usize);
    for &item in &split.hot {
        for instance in 0..k {
            replicas.push(ReplicaNode {
                item,
                instance,
                heat: heat.get(item) as f64 / k as f64,
                size: catalog.item(item).token_count as u64,
            });
        }
    }
    ItemGraph {
        k,
        replicas,
        cold: split.cold.clone(),
        csr,
    }
}
