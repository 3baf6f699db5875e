//! Seeded synthetic workloads.
//!
//! Items get a popularity rank (a seeded permutation of catalog order) with
//! Zipf weights `rank^-s`, and are split into equally sized latent clusters.
//! A request draws an anchor item from the global Zipf law, adopts the
//! anchor's cluster, and draws every further candidate from inside that
//! cluster with probability `cluster_coherence` (cluster-restricted Zipf) or
//! from the global law otherwise. Because the anchor picks a cluster with
//! probability proportional to the cluster's total weight, the marginal
//! popularity of every item stays Zipf(s) up to de-duplication.
//!
//! Users own a home cluster chosen the same way; their historical reviews
//! follow the same coherence rule, so the review corpus carries the
//! co-occurrence structure the placement graph looks for.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::{
    Catalog, HistoryEntry, ItemRecord, Request, ReviewCorpus, ReviewRecord, Trace, TraceMeta,
    WorkloadError,
};

const CATALOG_STREAM: u64 = 1;
const CORPUS_STREAM: u64 = 2;
const TRACE_STREAM: u64 = 3;
const HISTORY_TRACE_STREAM: u64 = 4;
const HELDOUT_STREAM: u64 = 5;

/// Star-rating mix, 1 through 5 stars.
const RATING_WEIGHTS: [f64; 5] = [0.08, 0.07, 0.12, 0.23, 0.50];

/// Token ids at or above this offset from `vocab_size` are never produced by
/// the shared vocabulary.
const NOVEL_TOKEN_SPAN: u32 = 1 << 24;

/// Integer-valued distribution used for token counts and list lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenDist {
    Fixed { value: u32 },
    Uniform { min: u32, max: u32 },
    LogNormal { median: f64, sigma: f64, min: u32, max: u32 },
}

impl TokenDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            TokenDist::Fixed { value } => value,
            TokenDist::Uniform { min, max } => rng.random_range(min..=max),
            TokenDist::LogNormal {
                median,
                sigma,
                min,
                max,
            } => {
                let d = LogNormal::new(median.ln(), sigma).expect("validated lognormal");
                let v: f64 = d.sample(rng);
                (v.round() as u32).clamp(min, max)
            }
        }
    }

    fn validate(&self, name: &str, allow_zero: bool) -> Result<(), WorkloadError> {
        let floor = u32::from(!allow_zero);
        let ok = match *self {
            TokenDist::Fixed { value } => value >= floor,
            TokenDist::Uniform { min, max } => min >= floor && min <= max,
            TokenDist::LogNormal {
                median,
                sigma,
                min,
                max,
            } => median > 0.0 && sigma >= 0.0 && median.is_finite() && min >= floor && min <= max,
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::InvalidConfig(format!("{name}: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub n_requests: usize,
    pub zipf_s: f64,
    pub qps: f64,
    pub candidates_per_request: usize,
    pub instruction_tokens: u32,
    pub item_token_dist: TokenDist,
    /// Number of history reviews per request.
    pub history_len_dist: TokenDist,
    /// Tokens per review.
    pub review_token_dist: TokenDist,
    pub reviews_per_user: TokenDist,
    pub n_clusters: usize,
    pub cluster_coherence: f64,
    pub n_categories: usize,
    pub vocab_size: u32,
    pub vocab_zipf_s: f64,
    /// Probability that a token of a request-history review comes from the
    /// vocabulary shared with the historical corpus.
    pub vocab_overlap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 20_000,
            n_users: 2_000,
            n_requests: 5_000,
            zipf_s: 0.8,
            qps: 30.0,
            candidates_per_request: 20,
            instruction_tokens: 207,
            item_token_dist: TokenDist::LogNormal {
                median: 82.0,
                sigma: 0.35,
                min: 16,
                max: 400,
            },
            history_len_dist: TokenDist::Uniform { min: 4, max: 12 },
            review_token_dist: TokenDist::LogNormal {
                median: 70.0,
                sigma: 0.45,
                min: 8,
                max: 250,
            },
            reviews_per_user: TokenDist::Uniform { min: 5, max: 25 },
            n_clusters: 400,
            cluster_coherence: 0.9,
            n_categories: 3,
            vocab_size: 2_000,
            vocab_zipf_s: 1.0,
            vocab_overlap: 0.95,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidConfig(m.to_string()));
        if self.n_items == 0 || self.n_users == 0 || self.n_requests == 0 {
            return bad("n_items, n_users and n_requests must be positive");
        }
        if !(self.zipf_s > 0.0 && self.zipf_s.is_finite()) {
            return bad("zipf_s must be positive");
        }
        if !(self.qps > 0.0 && self.qps.is_finite()) {
            return bad("qps must be positive");
        }
        if self.candidates_per_request == 0 || self.candidates_per_request > self.n_items {
            return bad("candidates_per_request must be in 1..=n_items");
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return bad("n_clusters must be in 1..=n_items");
        }
        if !(0.0..=1.0).contains(&self.cluster_coherence) {
            return bad("cluster_coherence must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.vocab_overlap) {
            return bad("vocab_overlap must be in [0, 1]");
        }
        if self.vocab_size == 0 || !(self.vocab_zipf_s > 0.0) {
            return bad("vocab_size and vocab_zipf_s must be positive");
        }
        if self.n_categories == 0 {
            return bad("n_categories must be positive");
        }
        self.item_token_dist.validate("item_token_dist", false)?;
        self.history_len_dist.validate("history_len_dist", true)?;
        self.review_token_dist.validate("review_token_dist", false)?;
        self.reviews_per_user.validate("reviews_per_user", true)?;
        Ok(())
    }
}

/// Held-out reviews plus the generator's ground truth on vocabulary overlap.
#[derive(Debug, Clone)]
pub struct HeldOutReviews {
    pub corpus: ReviewCorpus,
    /// Fraction of emitted tokens drawn from the shared vocabulary.
    pub shared_token_fraction: f64,
}

/// Holds the catalog and latent structure so several corpora and traces can
/// be drawn over the same items.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: SynthConfig,
    seed: u64,
    catalog: Catalog,
    /// Catalog index of the item at each popularity rank (0 = most popular).
    by_rank: Vec<usize>,
    rank_of: Vec<usize>,
    cluster_of: Vec<usize>,
    /// Members of each cluster as catalog indices, most popular first.
    members: Vec<Vec<usize>>,
    global: WeightedIndex<f64>,
    per_cluster: Vec<WeightedIndex<f64>>,
    vocab: WeightedIndex<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn zipf_weight(rank: usize, s: f64) -> f64 {
    ((rank + 1) as f64).powf(-s)
}

fn sample_rating<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in RATING_WEIGHTS.iter().enumerate() {
        acc += w;
        if u < acc {
            return i as u8 + 1;
        }
    }
    5
}

impl Synthesizer {
    pub fn new(cfg: SynthConfig, seed: u64) -> Result<Self, WorkloadError> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, CATALOG_STREAM);
        let n = cfg.n_items;

        let token_counts: Vec<u32> = (0..n).map(|_| cfg.item_token_dist.sample(&mut rng)).collect();

        let mut by_rank: Vec<usize> = (0..n).collect();
        by_rank.shuffle(&mut rng);
        let mut rank_of = vec![0; n];
        for (r, &i) in by_rank.iter().enumerate() {
            rank_of[i] = r;
        }

        // Equal-sized clusters from an independent permutation.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut cluster_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            cluster_of[i] = pos * cfg.n_clusters / n;
        }
        let mut members = vec![Vec::new(); cfg.n_clusters];
        for &i in &by_rank {
            members[cluster_of[i]].push(i);
        }

        // Categories follow clusters so related items share one.
        let mut catalog = Catalog::new();
        for (i, &token_count) in token_counts.iter().enumerate() {
            catalog.insert(ItemRecord {
                item_id: format!("item-{i:07}"),
                token_count,
                category: format!("cat-{}", cluster_of[i] % cfg.n_categories),
            })?;
        }

        let global = WeightedIndex::new((0..n).map(|r| zipf_weight(r, cfg.zipf_s)))
            .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?;
        let per_cluster = members
            .iter()
            .map(|m| {
                WeightedIndex::new(m.iter().map(|&i| zipf_weight(rank_of[i], cfg.zipf_s)))
                    .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = WeightedIndex::new((0..cfg.vocab_size as usize).map(|r| zipf_weight(r, cfg.vocab_zipf_s)))
            .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?;

        Ok(Self {
            cfg,
            seed,
            catalog,
            by_rank,
            rank_of,
            cluster_of,
            members,
            global,
            per_cluster,
            vocab,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Popularity rank of a catalog index (0 = most popular).
    pub fn rank_of(&self, item: usize) -> usize {
        self.rank_of[item]
    }

    /// Latent cluster of a catalog index.
    pub fn cluster_of(&self, item: usize) -> usize {
        self.cluster_of[item]
    }

    pub fn cluster_members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    fn draw_global<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.by_rank[self.global.sample(rng)]
    }

    fn draw_in_cluster<R: Rng + ?Sized>(&self, cluster: usize, rng: &mut R) -> usize {
        self.members[cluster][self.per_cluster[cluster].sample(rng)]
    }

    /// Draws from the cluster with probability `coherence`, else globally.
    fn draw_related<R: Rng + ?Sized>(&self, cluster: usize, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.cfg.cluster_coherence {
            self.draw_in_cluster(cluster, rng)
        } else {
            self.draw_global(rng)
        }
    }

    fn review_tokens<R: Rng + ?Sized>(&self, rng: &mut R, overlap: f64, shared: &mut u64) -> Vec<u32> {
        let len = self.cfg.review_token_dist.sample(rng) as usize;
        (0..len)
            .map(|_| {
                if overlap >= 1.0 || rng.random::<f64>() < overlap {
                    *shared += 1;
                    self.vocab.sample(rng) as u32
                } else {
                    self.cfg.vocab_size + rng.random_range(0..NOVEL_TOKEN_SPAN)
                }
            })
            .collect()
    }

    /// Historical review corpus over the shared vocabulary.
    pub fn corpus(&self) -> ReviewCorpus {
        let mut rng = stream_rng(self.seed, CORPUS_STREAM);
        let mut reviews = Vec::new();
        let mut clock = 0u64;
        let mut shared = 0u64;
        for u in 0..self.cfg.n_users {
            let home = self.cluster_of[self.draw_global(&mut rng)];
            let count = self.cfg.reviews_per_user.sample(&mut rng);
            for _ in 0..count {
                let item = self.draw_related(home, &mut rng);
                let rating = sample_rating(&mut rng);
                let token_ids = self.review_tokens(&mut rng, 1.0, &mut shared);
                reviews.push(ReviewRecord {
                    user_id: format!("user-{u:06}"),
                    item_id: self.catalog.item(item).item_id.clone(),
                    rating,
                    token_ids,
                    timestamp: clock,
                });
                clock += 1;
            }
        }
        ReviewCorpus::new(reviews)
    }

    /// Reviews written after the corpus snapshot: tokens come from the shared
    /// vocabulary with probability `vocab_overlap`, otherwise they are novel.
    pub fn heldout_reviews(&self, n_reviews: usize) -> HeldOutReviews {
        let mut rng = stream_rng(self.seed, HELDOUT_STREAM);
        let mut shared = 0u64;
        let mut total = 0u64;
        let reviews = (0..n_reviews)
            .map(|j| {
                let item = self.draw_global(&mut rng);
                let rating = sample_rating(&mut rng);
                let token_ids = self.review_tokens(&mut rng, self.cfg.vocab_overlap, &mut shared);
                total += token_ids.len() as u64;
                ReviewRecord {
                    user_id: format!("heldout-{j:06}"),
                    item_id: self.catalog.item(item).item_id.clone(),
                    rating,
                    token_ids,
                    timestamp: j as u64,
                }
            })
            .collect();
        HeldOutReviews {
            corpus: ReviewCorpus::new(reviews),
            shared_token_fraction: if total == 0 { 0.0 } else { shared as f64 / total as f64 },
        }
    }

    /// The evaluation trace.
    pub fn trace(&self) -> Trace {
        self.trace_on_stream(TRACE_STREAM, "synthetic")
    }

    /// An independent trace over the same catalog, used as the "historical
    /// requests" input to placement.
    pub fn history_trace(&self) -> Trace {
        self.trace_on_stream(HISTORY_TRACE_STREAM, "synthetic-history")
    }

    fn trace_on_stream(&self, stream: u64, source: &str) -> Trace {
        let mut rng = stream_rng(self.seed, stream);
        let arrivals = Exp::new(self.cfg.qps).expect("validated qps");
        let m = self.cfg.candidates_per_request;
        let mut t = 0.0f64;
        let mut shared = 0u64;
        let mut used = vec![false; self.cfg.n_items];
        let mut requests = Vec::with_capacity(self.cfg.n_requests);
        for k in 0..self.cfg.n_requests {
            t += arrivals.sample(&mut rng);
            let anchor = self.draw_global(&mut rng);
            let cluster = self.cluster_of[anchor];
            let mut picked = vec![anchor];
            used[anchor] = true;
            while picked.len() < m {
                let item = self.draw_distinct(cluster, &used, &mut rng);
                used[item] = true;
                picked.push(item);
            }
            for &i in &picked {
                used[i] = false;
            }

            let n_hist = self.cfg.history_len_dist.sample(&mut rng);
            let history = (0..n_hist)
                .map(|_| {
                    let item = self.draw_related(cluster, &mut rng);
                    HistoryEntry {
                        item_id: self.catalog.item(item).item_id.clone(),
                        rating: sample_rating(&mut rng),
                        token_ids: self.review_tokens(&mut rng, self.cfg.vocab_overlap, &mut shared),
                    }
                })
                .collect();

            requests.push(Request {
                request_id: format!("req-{k:07}"),
                arrival_time: t,
                instruction_tokens: self.cfg.instruction_tokens,
                history,
                candidates: picked
                    .iter()
                    .map(|&i| self.catalog.item(i).item_id.clone())
                    .collect(),
            });
        }
        Trace::new(
            TraceMeta {
                source: source.to_string(),
                qps: self.cfg.qps,
                seed: self.seed,
            },
            requests,
        )
        .expect("generator emits a valid trace")
    }

    /// Picks a candidate not yet in `used`. The coherence coin is tossed once
    /// per slot; retries stay in the chosen pool.
    fn draw_distinct<R: Rng + ?Sized>(&self, cluster: usize, used: &[bool], rng: &mut R) -> usize {
        const ATTEMPTS: usize = 32;
        let in_cluster = rng.random::<f64>() < self.cfg.cluster_coherence;
        for _ in 0..ATTEMPTS {
            let item = if in_cluster {
                self.draw_in_cluster(cluster, rng)
            } else {
                self.draw_global(rng)
            };
            if !used[item] {
                return item;
            }
        }
        // Exhausted pools: most popular unused member, then global order.
        let members: &[usize] = if in_cluster { &self.members[cluster] } else { &[] };
        members
            .iter()
            .chain(self.by_rank.iter())
            .copied()
            .find(|&i| !used[i])
            .expect("candidates_per_request <= n_items")
    }
}

/// Builds a catalog, a historical review corpus and an evaluation trace.
pub fn synthesize_trace(
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Catalog, ReviewCorpus, Trace), WorkloadError> {
    let synth = Synthesizer::new(cfg.clone(), seed)?;
    let corpus = synth.corpus();
    let trace = synth.trace();
    Ok((synth.catalog, corpus, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_items: 500,
            n_users: 50,
            n_requests: 200,
            n_clusters: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig { n_items: 0, ..small() },
            SynthConfig { zipf_s: 0.0, ..small() },
            SynthConfig { qps: -1.0, ..small() },
            SynthConfig { candidates_per_request: 0, ..small() },
            SynthConfig { cluster_coherence: 1.5, ..small() },
            SynthConfig {
                item_token_dist: TokenDist::Fixed { value: 0 },
                ..small()
            },
        ] {
            assert!(matches!(
                Synthesizer::new(cfg, 1).unwrap_err(),
                WorkloadError::InvalidConfig(_)
            ));
        }
    }

    #[test]
    fn clusters_are_balanced() {
        let s = Synthesizer::new(small(), 3).unwrap();
        for c in 0..20 {
            assert_eq!(s.cluster_members(c).len(), 25);
        }
    }

    #[test]
    fn candidates_are_distinct_and_known() {
        let s = Synthesizer::new(small(), 3).unwrap();
        let t = s.trace();
        assert_eq!(t.len(), 200);
        for r in &t.requests {
            assert_eq!(r.candidates.len(), 20);
            for c in &r.candidates {
                assert!(s.catalog().get(c).is_some());
            }
        }
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let s = Synthesizer::new(small(), 3).unwrap();
        assert_ne!(s.trace().requests[0].candidates, s.history_trace().requests[0].candidates);
        assert_eq!(s.trace(), s.trace());
    }
}
