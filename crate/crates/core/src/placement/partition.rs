//! Multilevel k-way partitioner: heavy-edge matching to coarsen, two
//! initial assignments on the coarsest graph (region growing and greedy
//! packing), then boundary refinement while projecting back.
//! Deterministic for a given input order.

use serde::{Deserialize, Serialize};

use super::graph::CsrGraph;
use super::PlacementError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub k: u32,
    pub hot_fraction: f64,
    pub balance_eps: f64,
    pub refinement_passes: u32,
    /// Optional cap on per-part heat, as a fraction above the mean. Replica
    /// heat counts towards every part. `None` balances tokens only.
    pub heat_balance_eps: Option<f64>,
    pub kv_bytes_per_token: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            k: 4,
            hot_fraction: 0.001,
            balance_eps: 0.05,
            refinement_passes: 10,
            heat_balance_eps: None,
            kv_bytes_per_token: 275_000,
        }
    }
}

impl PartitionConfig {
    pub fn with_k(k: u32) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        let bad = |m: &str| Err(PlacementError::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(0.0..1.0).contains(&self.hot_fraction) {
            return bad("hot_fraction must lie in [0, 1)");
        }
        if !(self.balance_eps > 0.0 && self.balance_eps.is_finite()) {
            return bad("balance_eps must be positive");
        }
        if let Some(h) = self.heat_balance_eps {
            if !(h > 0.0 && h.is_finite()) {
                return bad("heat_balance_eps must be positive");
            }
        }
        if self.kv_bytes_per_token == 0 {
            return bad("kv_bytes_per_token must be positive");
        }
        Ok(())
    }
}

/// Per-part capacities. `base_heat` is heat already committed to every part
/// (replicas) and counts against `heat_cap`.
#[derive(Debug, Clone, Copy)]
struct Caps {
    size: f64,
    /// Soft lower bound on part size; refinement never drains a part below
    /// it and rebalancing tops up parts that start below it.
    floor: f64,
    heat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwayPartition {
    pub parts: Vec<u32>,
    pub edge_cut: u64,
    /// The balance tolerance actually met (doubled once if needed).
    pub effective_eps: f64,
}

/// Partitions `g` into `k` parts. `base_heat[p]` is heat already sitting on
/// part `p` (pinned replicas); it only matters when heat balancing is on.
pub fn kway_partition(
    g: &CsrGraph,
    k: usize,
    cfg: &PartitionConfig,
    base_heat: &[f64],
) -> Result<KwayPartition, PlacementError> {
    if k == 0 {
        return Err(PlacementError::InvalidConfig("k must be at least 1".into()));
    }
    if g.n() < k {
        return Err(PlacementError::TooFewNodes { k, nodes: g.n() });
    }
    assert_eq!(base_heat.len(), k);
    if k == 1 {
        return Ok(KwayPartition {
            parts: vec![0; g.n()],
            edge_cut: 0,
            effective_eps: cfg.balance_eps,
        });
    }
    let total_size = g.total_size() as f64;
    let total_heat = g.total_heat() + base_heat.iter().sum::<f64>();
    let mut eps = cfg.balance_eps;
    for attempt in 0..2 {
        let caps = Caps {
            size: (1.0 + eps) * total_size / k as f64 + 1e-9,
            floor: (1.0 - eps) * total_size / k as f64 - 1e-9,
            heat: cfg
                .heat_balance_eps
                .map_or(f64::INFINITY, |h| (1.0 + h) * total_heat / k as f64),
        };
        let parts = multilevel(g, k, caps, cfg.refinement_passes, base_heat);
        let loads = part_sizes(g, &parts, k);
        if loads.iter().all(|&l| l as f64 <= caps.size) {
            if attempt > 0 {
                log::warn!("partition balance relaxed to eps={eps}");
            }
            return Ok(KwayPartition {
                edge_cut: g.edge_cut(&parts),
                parts,
                effective_eps: eps,
            });
        }
        eps *= 2.0;
    }
    Err(PlacementError::Infeasible { eps })
}

pub fn part_sizes(g: &CsrGraph, parts: &[u32], k: usize) -> Vec<u64> {
    let mut loads = vec![0u64; k];
    for (v, &p) in parts.iter().enumerate() {
        loads[p as usize] += g.vsize[v];
    }
    loads
}

fn multilevel(g: &CsrGraph, k: usize, caps: Caps, passes: u32, base_heat: &[f64]) -> Vec<u32> {
    let target = (5 * k).max(120);
    let mut levels: Vec<(Vec<u32>, CsrGraph)> = Vec::new();
    loop {
        let cur = levels.last().map_or(g, |(_, c)| c);
        if cur.n() <= target {
            break;
        }
        // Coarse vertices stay small enough that the initial assignment can
        // still balance them.
        let max_size = (1.5 * cur.total_size() as f64 / target as f64).max(1.0);
        let max_heat = if caps.heat.is_finite() {
            (1.5 * cur.total_heat() / target as f64).max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        };
        let (cmap, cn) = heavy_edge_matching(cur, max_size, max_heat);
        if cn as f64 > 0.95 * cur.n() as f64 {
            break;
        }
        let coarse = contract(cur, &cmap, cn);
        levels.push((cmap, coarse));
    }

    let coarsest = levels.last().map_or(g, |(_, c)| c);
    // Two initial assignments, each projected and refined to the finest
    // level; the better final partition wins.
    let uncoarsen = |mut parts: Vec<u32>| {
        refine(coarsest, &mut parts, k, caps, passes, base_heat);
        for lvl in (0..levels.len()).rev() {
            let cmap = &levels[lvl].0;
            let fine = if lvl == 0 { g } else { &levels[lvl - 1].1 };
            parts = cmap.iter().map(|&c| parts[c as usize]).collect();
            refine(fine, &mut parts, k, caps, passes, base_heat);
        }
        parts
    };
    let grown = uncoarsen(grow_initial(coarsest, k, caps, base_heat));
    let greedy = uncoarsen(greedy_initial(coarsest, k, caps, base_heat));
    if score(g, &greedy, k, caps) < score(g, &grown, k, caps) {
        greedy
    } else {
        grown
    }
}

/// Matches each vertex with its heaviest-edge unmatched neighbour, visiting
/// vertices by ascending degree. Returns the fine-to-coarse map.
fn heavy_edge_matching(g: &CsrGraph, max_size: f64, max_heat: f64) -> (Vec<u32>, usize) {
    const UNSET: u32 = u32::MAX;
    let n = g.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (g.degree(v), v));
    let mut mate = vec![UNSET; n];
    for &v in &order {
        if mate[v] != UNSET {
            continue;
        }
        let mut best: Option<(u64, usize)> = None;
        for (u, w) in g.neighbors(v) {
            if mate[u] != UNSET || u == v {
                continue;
            }
            if (g.vsize[u] + g.vsize[v]) as f64 > max_size || g.vheat[u] + g.vheat[v] > max_heat {
                continue;
            }
            if best.is_none_or(|(bw, bu)| w > bw || (w == bw && u < bu)) {
                best = Some((w, u));
            }
        }
        match best {
            Some((_, u)) => {
                mate[v] = u as u32;
                mate[u] = v as u32;
            }
            None => mate[v] = v as u32,
        }
    }
    let mut cmap = vec![UNSET; n];
    let mut cn = 0u32;
    for v in 0..n {
        if cmap[v] == UNSET {
            cmap[v] = cn;
            cmap[mate[v] as usize] = cn;
            cn += 1;
        }
    }
    (cmap, cn as usize)
}

fn contract(g: &CsrGraph, cmap: &[u32], cn: usize) -> CsrGraph {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cn];
    for (v, &c) in cmap.iter().enumerate() {
        members[c as usize].push(v);
    }
    let mut vsize = vec![0u64; cn];
    let mut vheat = vec![0f64; cn];
    let mut xadj = Vec::with_capacity(cn + 1);
    xadj.push(0usize);
    let mut adjncy = Vec::new();
    let mut adjwgt = Vec::new();
    let mut slot = vec![usize::MAX; cn];
    for (c, vs) in members.iter().enumerate() {
        let start = adjncy.len();
        for &v in vs {
            vsize[c] += g.vsize[v];
            vheat[c] += g.vheat[v];
            for (u, w) in g.neighbors(v) {
                let cu = cmap[u] as usize;
                if cu == c {
                    continue;
                }
                if slot[cu] == usize::MAX || slot[cu] < start {
                    slot[cu] = adjncy.len();
                    adjncy.push(cu as u32);
                    adjwgt.push(w);
                } else {
                    adjwgt[slot[cu]] += w;
                }
            }
        }
        // Keep adjacency sorted for deterministic scans.
        let mut pairs: Vec<(u32, u64)> = adjncy[start..]
            .iter()
            .copied()
            .zip(adjwgt[start..].iter().copied())
            .collect();
        pairs.sort_unstable();
        for (i, (a, w)) in pairs.into_iter().enumerate() {
            adjncy[start + i] = a;
            adjwgt[start + i] = w;
        }
        for &a in &adjncy[start..] {
            slot[a as usize] = usize::MAX;
        }
        xadj.push(adjncy.len());
    }
    CsrGraph {
        xadj,
        adjncy,
        adjwgt,
        vsize,
        vheat,
    }
}

struct State<'a> {
    g: &'a CsrGraph,
    k: usize,
    caps: Caps,
    size: Vec<u64>,
    heat: Vec<f64>,
    conn: Vec<u64>,
    touched: Vec<usize>,
}

impl<'a> State<'a> {
    fn new(g: &'a CsrGraph, k: usize, caps: Caps, base_heat: &[f64]) -> Self {
        Self {
            g,
            k,
            caps,
            size: vec![0; k],
            heat: base_heat.to_vec(),
            conn: vec![0; k],
            touched: Vec::new(),
        }
    }

    fn from_parts(g: &'a CsrGraph, k: usize, caps: Caps, base_heat: &[f64], parts: &[u32]) -> Self {
        let mut s = Self::new(g, k, caps, base_heat);
        for (v, &p) in parts.iter().enumerate() {
            s.size[p as usize] += g.vsize[v];
            s.heat[p as usize] += g.vheat[v];
        }
        s
    }

    /// Fills `conn` with edge weight from `v` to each assigned part.
    fn load_conn(&mut self, v: usize, parts: &[u32]) {
        for &p in &self.touched {
            self.conn[p] = 0;
        }
        self.touched.clear();
        for (u, w) in self.g.neighbors(v) {
            let p = parts[u];
            if p == u32::MAX {
                continue;
            }
            let p = p as usize;
            if self.conn[p] == 0 {
                self.touched.push(p);
            }
            self.conn[p] += w;
        }
    }

    fn fits(&self, v: usize, p: usize) -> bool {
        self.size[p] as f64 + self.g.vsize[v] as f64 <= self.caps.size
            && self.heat[p] + self.g.vheat[v] <= self.caps.heat
    }

    fn fits_size(&self, v: usize, p: usize) -> bool {
        self.size[p] as f64 + self.g.vsize[v] as f64 <= self.caps.size
    }

    fn keeps_floor(&self, v: usize, p: usize) -> bool {
        self.size[p] as f64 - self.g.vsize[v] as f64 >= self.caps.floor
    }

    fn under(&self, p: usize) -> bool {
        (self.size[p] as f64) < self.caps.floor
    }

    fn over(&self, p: usize) -> bool {
        self.size[p] as f64 > self.caps.size || self.heat[p] > self.caps.heat
    }

    fn shift(&mut self, v: usize, from: usize, to: usize) {
        self.size[from] -= self.g.vsize[v];
        self.heat[from] -= self.g.vheat[v];
        self.size[to] += self.g.vsize[v];
        self.heat[to] += self.g.vheat[v];
    }
}

/// Feasible partitions first, then lower cut.
fn score(g: &CsrGraph, parts: &[u32], k: usize, caps: Caps) -> (bool, u64) {
    let over = part_sizes(g, parts, k).iter().any(|&l| l as f64 > caps.size);
    (over, g.edge_cut(parts))
}

/// Fills parts one at a time up to the mean load, always taking the
/// unassigned vertex most strongly connected to the part being filled. New
/// regions start from the heaviest remaining vertex by weighted degree.
fn grow_initial(g: &CsrGraph, k: usize, caps: Caps, base_heat: &[f64]) -> Vec<u32> {
    use std::collections::BinaryHeap;
    use std::cmp::Reverse;

    let n = g.n();
    let target = g.total_size() as f64 / k as f64;
    let wdeg: Vec<u64> = (0..n).map(|v| g.neighbors(v).map(|(_, w)| w).sum()).collect();
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by(|&a, &b| wdeg[b].cmp(&wdeg[a]).then(a.cmp(&b)));
    let mut next_seed = 0usize;
    let mut parts = vec![u32::MAX; n];
    let mut st = State::new(g, k, caps, base_heat);
    let mut conn = vec![0u64; n];
    // Vertices that did not fit the current part; retried on the next one.
    let mut stamp = vec![usize::MAX; n];

    for p in 0..k - 1 {
        let mut heap: BinaryHeap<(u64, Reverse<usize>)> = BinaryHeap::new();
        let mut touched: Vec<usize> = Vec::new();
        while (st.size[p] as f64) < target {
            let v = loop {
                match heap.pop() {
                    Some((c, Reverse(v))) if parts[v] == u32::MAX && stamp[v] != p && c == conn[v] => {
                        break Some(v)
                    }
                    Some(_) => continue,
                    None => {
                        while next_seed < n && (parts[seeds[next_seed]] != u32::MAX || stamp[seeds[next_seed]] == p) {
                            next_seed += 1;
                        }
                        break seeds.get(next_seed).copied();
                    }
                }
            };
            let Some(v) = v else { break };
            if !st.fits(v, p) {
                stamp[v] = p;
                continue;
            }
            parts[v] = p as u32;
            st.size[p] += g.vsize[v];
            st.heat[p] += g.vheat[v];
            for (u, w) in g.neighbors(v) {
                if parts[u] == u32::MAX {
                    if conn[u] == 0 {
                        touched.push(u);
                    }
                    conn[u] += w;
                    heap.push((conn[u], Reverse(u)));
                }
            }
        }
        for u in touched {
            conn[u] = 0;
        }
        next_seed = 0;
    }
    for v in 0..n {
        if parts[v] == u32::MAX {
            parts[v] = (k - 1) as u32;
        }
    }
    parts
}

/// Assigns vertices in descending size order to the feasible part with the
/// strongest connection, then the lightest load, then the lowest index.
fn greedy_initial(g: &CsrGraph, k: usize, caps: Caps, base_heat: &[f64]) -> Vec<u32> {
    let n = g.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g.vsize[b].cmp(&g.vsize[a]).then(a.cmp(&b)));
    let mut parts = vec![u32::MAX; n];
    let mut st = State::new(g, k, caps, base_heat);
    for &v in &order {
        st.load_conn(v, &parts);
        let pick = |st: &State, feasible: &dyn Fn(usize) -> bool| -> Option<usize> {
            let mut best: Option<usize> = None;
            for p in 0..k {
                if !feasible(p) {
                    continue;
                }
                best = match best {
                    None => Some(p),
                    Some(b) => {
                        let better = st.conn[p] > st.conn[b]
                            || (st.conn[p] == st.conn[b] && st.size[p] < st.size[b]);
                        Some(if better { p } else { b })
                    }
                };
            }
            best
        };
        let p = pick(&st, &|p| st.fits(v, p))
            .or_else(|| pick(&st, &|p| st.fits_size(v, p)))
            .unwrap_or_else(|| (0..k).min_by_key(|&p| (st.size[p], p)).unwrap());
        parts[v] = p as u32;
        st.size[p] += g.vsize[v];
        st.heat[p] += g.vheat[v];
    }
    parts
}

/// Restores the capacity constraints, then runs greedy boundary passes that
/// move a vertex to the neighbouring part with the largest positive cut
/// gain (or a zero-gain move that evens out loads).
fn refine(g: &CsrGraph, parts: &mut [u32], k: usize, caps: Caps, passes: u32, base_heat: &[f64]) {
    let mut st = State::from_parts(g, k, caps, base_heat, parts);
    rebalance(&mut st, parts);
    for _ in 0..passes {
        let mut moved = 0usize;
        for v in 0..g.n() {
            let a = parts[v] as usize;
            st.load_conn(v, parts);
            if st.touched.iter().all(|&p| p == a) || !st.keeps_floor(v, a) {
                continue;
            }
            let own = st.conn[a] as i64;
            let mut best: Option<(i64, usize)> = None;
            for &b in &st.touched {
                if b == a || !st.fits(v, b) {
                    continue;
                }
                let gain = st.conn[b] as i64 - own;
                let better = match best {
                    None => true,
                    Some((bg, bb)) => {
                        gain > bg || (gain == bg && (st.size[b], b) < (st.size[bb], bb))
                    }
                };
                if better {
                    best = Some((gain, b));
                }
            }
            if let Some((gain, b)) = best {
                let evens = st.size[b] + g.vsize[v] < st.size[a];
                if gain > 0 || (gain == 0 && evens) {
                    parts[v] = b as u32;
                    st.shift(v, a, b);
                    moved += 1;
                }
            }
        }
        if moved == 0 {
            break;
        }
    }
}

/// Moves vertices out of over-capacity parts, then into parts below the
/// floor, cheapest cut loss first.
fn rebalance(st: &mut State, parts: &mut [u32]) {
    shed_overload(st, parts);
    fill_underweight(st, parts);
}

fn fill_underweight(st: &mut State, parts: &mut [u32]) {
    let g = st.g;
    let k = st.k;
    for _round in 0..8 {
        let under: Vec<usize> = (0..k).filter(|&p| st.under(p)).collect();
        if under.is_empty() {
            return;
        }
        let mut moves: Vec<(i64, usize, usize)> = Vec::new();
        for v in 0..g.n() {
            let a = parts[v] as usize;
            if st.under(a) || !st.keeps_floor(v, a) {
                continue;
            }
            st.load_conn(v, parts);
            let own = st.conn[a] as i64;
            let mut best: Option<(i64, usize)> = None;
            for &b in &under {
                if !st.fits(v, b) {
                    continue;
                }
                let loss = own - st.conn[b] as i64;
                if best.is_none_or(|(bl, bb)| loss < bl || (loss == bl && st.size[b] < st.size[bb])) {
                    best = Some((loss, b));
                }
            }
            if let Some((loss, b)) = best {
                moves.push((loss, v, b));
            }
        }
        moves.sort_by_key(|&(loss, v, _)| (loss, v));
        let mut any = false;
        for (_, v, b) in moves {
            let a = parts[v] as usize;
            if !st.under(b) || !st.keeps_floor(v, a) || !st.fits(v, b) {
                continue;
            }
            parts[v] = b as u32;
            st.shift(v, a, b);
            any = true;
        }
        if !any {
            return;
        }
    }
}

fn shed_overload(st: &mut State, parts: &mut [u32]) {
    let g = st.g;
    let k = st.k;
    for _round in 0..8 {
        let over: Vec<bool> = (0..k).map(|p| st.over(p)).collect();
        if !over.iter().any(|&o| o) {
            return;
        }
        // Candidate moves: (loss, vertex, target).
        let mut moves: Vec<(i64, usize, usize)> = Vec::new();
        for v in 0..g.n() {
            let a = parts[v] as usize;
            if !over[a] {
                continue;
            }
            st.load_conn(v, parts);
            let own = st.conn[a] as i64;
            let mut best: Option<(i64, usize)> = None;
            for b in 0..k {
                if b == a || over[b] || !st.fits(v, b) {
                    continue;
                }
                let loss = own - st.conn[b] as i64;
                if best.is_none_or(|(bl, bb)| loss < bl || (loss == bl && st.size[b] < st.size[bb])) {
                    best = Some((loss, b));
                }
            }
            if let Some((loss, b)) = best {
                moves.push((loss, v, b));
            }
        }
        moves.sort_by_key(|&(loss, v, _)| (loss, std::cmp::Reverse(g.vsize[v]), v));
        let mut any = false;
        for (_, v, b) in moves {
            let a = parts[v] as usize;
            if !st.over(a) || !st.fits(v, b) {
                continue;
            }
            parts[v] = b as u32;
            st.shift(v, a, b);
            any = true;
        }
        if !any {
            // Heat cannot be met; fall back to tokens only.
            if (0..k).all(|p| st.size[p] as f64 <= st.caps.size) {
                return;
            }
            st.caps.heat = f64::INFINITY;
        }
    }
}
