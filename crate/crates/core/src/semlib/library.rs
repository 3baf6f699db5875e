use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::embed::{dot, normalize, Embedder, EmbeddingConfig};
use super::lsh::{Hyperplanes, LshConfig, LshIndex};
use super::SemlibError;
use crate::workload::{ReviewCorpus, Trace};

pub const DEFAULT_BUDGET: usize = 100_000;

/// One canonical token standing in for a cluster of (token, position)
/// occurrences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub proto_id: u32,
    pub position_bucket: u32,
    pub member_count: u64,
    pub centroid: Vec<f64>,
}

impl Prototype {
    /// Each prototype materializes the KV of a single token.
    pub const KV_TOKENS: u64 = 1;
}

/// Replicated library of semantic prototypes with its LSH index.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeLibrary {
    emb: EmbeddingConfig,
    budget: usize,
    prototypes: Vec<Prototype>,
    index: LshIndex,
}

struct Group {
    sum: Vec<f64>,
    count: u64,
    /// Member count per position bucket.
    bucket_counts: Vec<u64>,
}

impl Group {
    fn bucket(&self) -> u32 {
        let mut best = 0;
        for (b, &c) in self.bucket_counts.iter().enumerate() {
            if c > self.bucket_counts[best] {
                best = b;
            }
        }
        best as u32
    }

    fn centroid(&self) -> Vec<f64> {
        let mut c = self.sum.clone();
        normalize(&mut c);
        c
    }
}

/// Embeds every (token, position) occurrence, groups equal LSH signatures,
/// then merges the smallest groups into their nearest survivor until at
/// most `budget` remain.
pub fn build_library(
    corpus: &ReviewCorpus,
    budget: usize,
    emb: &Embedder,
    lsh: &LshConfig,
) -> Result<PrototypeLibrary, SemlibError> {
    if budget == 0 {
        return Err(SemlibError::InvalidConfig("budget must be at least 1".into()));
    }
    let cfg = emb.config();
    let planes = Hyperplanes::new(lsh, cfg.dim)?;
    if corpus.is_empty() {
        log::warn!("building a semantic library from an empty corpus");
    }

    // Embeddings depend on (token, bucket) only, so count those first.
    let mut occurrences: HashMap<(u32, u32), u64> = HashMap::new();
    for r in &corpus.reviews {
        for (pos, &t) in r.token_ids.iter().enumerate() {
            *occurrences.entry((t, cfg.bucket(pos as u32))).or_default() += 1;
        }
    }
    let mut keys: Vec<(u32, u32)> = occurrences.keys().copied().collect();
    keys.sort_unstable();

    let n_buckets = cfg.n_buckets() as usize;
    let mut groups: Vec<Group> = Vec::new();
    let mut by_signature: HashMap<Vec<u64>, usize> = HashMap::new();
    for (token, bucket) in keys {
        let count = occurrences[&(token, bucket)];
        let v = emb.embed_bucket(token, bucket)?;
        let gi = *by_signature.entry(planes.signature(&v)).or_insert_with(|| {
            groups.push(Group {
                sum: vec![0.0; cfg.dim],
                count: 0,
                bucket_counts: vec![0; n_buckets],
            });
            groups.len() - 1
        });
        let g = &mut groups[gi];
        for (s, x) in g.sum.iter_mut().zip(&v) {
            *s += x * count as f64;
        }
        g.count += count;
        g.bucket_counts[bucket as usize] += count;
    }
    drop(by_signature);

    if groups.len() > budget {
        let n_groups = groups.len();
        let mut order: Vec<usize> = (0..n_groups).collect();
        order.sort_by(|&a, &b| groups[b].count.cmp(&groups[a].count).then(a.cmp(&b)));
        let mut kept: Vec<usize> = order[..budget].to_vec();
        kept.sort_unstable();
        let survivors = LshIndex::build(
            planes.clone(),
            kept.iter().map(|&g| groups[g].centroid()).collect(),
            kept.iter().map(|&g| groups[g].bucket()).collect(),
        );
        // Smallest first, each into the survivor nearest its own centroid.
        for &gi in order[budget..].iter().rev() {
            let c = groups[gi].centroid();
            let (target, _) = survivors
                .nearest(&c, groups[gi].bucket())
                .expect("budget >= 1 survivor");
            let target = kept[target as usize];
            let (src, dst) = if gi < target {
                let (lo, hi) = groups.split_at_mut(target);
                (&lo[gi], &mut hi[0])
            } else {
                let (lo, hi) = groups.split_at_mut(gi);
                (&hi[0], &mut lo[target])
            };
            for (d, s) in dst.sum.iter_mut().zip(&src.sum) {
                *d += s;
            }
            dst.count += src.count;
            for (d, s) in dst.bucket_counts.iter_mut().zip(&src.bucket_counts) {
                *d += s;
            }
        }
        let mut keep_mask = vec![false; n_groups];
        for &g in &kept {
            keep_mask[g] = true;
        }
        groups = groups
            .into_iter()
            .zip(keep_mask)
            .filter_map(|(g, k)| k.then_some(g))
            .collect();
        log::info!("merged {} signature groups into {budget} prototypes", n_groups);
    }

    let prototypes: Vec<Prototype> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| Prototype {
            proto_id: i as u32,
            position_bucket: g.bucket(),
            member_count: g.count,
            centroid: g.centroid(),
        })
        .collect();
    Ok(PrototypeLibrary::assemble(cfg.clone(), lsh, budget, prototypes)?)
}

impl PrototypeLibrary {
    fn assemble(
        emb: EmbeddingConfig,
        lsh: &LshConfig,
        budget: usize,
        prototypes: Vec<Prototype>,
    ) -> Result<Self, SemlibError> {
        let planes = Hyperplanes::new(lsh, emb.dim)?;
        let index = LshIndex::build(
            planes,
            prototypes.iter().map(|p| p.centroid.clone()).collect(),
            prototypes.iter().map(|p| p.position_bucket).collect(),
        );
        Ok(Self {
            emb,
            budget,
            prototypes,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn prototypes(&self) -> &[Prototype] {
        &self.prototypes
    }

    pub fn embedding(&self) -> &EmbeddingConfig {
        &self.emb
    }

    pub fn lsh(&self) -> &LshConfig {
        self.index.hyperplanes().config()
    }

    pub fn index(&self) -> &LshIndex {
        &self.index
    }

    /// KV bytes the library occupies on every node.
    pub fn bytes(&self, kv_bytes_per_token: u64) -> u64 {
        self.prototypes.len() as u64 * Prototype::KV_TOKENS * kv_bytes_per_token
    }

    fn check_embedder(&self, emb: &Embedder) -> Result<(), SemlibError> {
        if emb.config() != &self.emb {
            return Err(SemlibError::InvalidConfig(
                "embedder differs from the one the library was built with".into(),
            ));
        }
        Ok(())
    }
}

/// Nearest prototype to the embedding of `(token_id, position)`.
pub fn match_token(
    token_id: u32,
    position: u32,
    lib: &PrototypeLibrary,
    emb: &Embedder,
) -> Result<(u32, f64), SemlibError> {
    if lib.is_empty() {
        return Err(SemlibError::EmptyLibrary);
    }
    lib.check_embedder(emb)?;
    let bucket = emb.config().bucket(position);
    let v = emb.embed_bucket(token_id, bucket)?;
    Ok(lib.index.nearest(&v, bucket).expect("library is not empty"))
}

/// Memoizing front end for repeated matching; results depend only on the
/// token and its position bucket.
#[derive(Debug)]
pub struct Matcher<'a> {
    lib: &'a PrototypeLibrary,
    emb: &'a Embedder,
    memo: HashMap<(u32, u32), (u32, f64)>,
}

impl<'a> Matcher<'a> {
    pub fn new(lib: &'a PrototypeLibrary, emb: &'a Embedder) -> Result<Self, SemlibError> {
        if lib.is_empty() {
            return Err(SemlibError::EmptyLibrary);
        }
        lib.check_embedder(emb)?;
        Ok(Self {
            lib,
            emb,
            memo: HashMap::new(),
        })
    }

    pub fn best(&mut self, token_id: u32, position: u32) -> Result<(u32, f64), SemlibError> {
        let bucket = self.emb.config().bucket(position);
        if let Some(&hit) = self.memo.get(&(token_id, bucket)) {
            return Ok(hit);
        }
        let v = self.emb.embed_bucket(token_id, bucket)?;
        let hit = self.lib.index.nearest(&v, bucket).expect("library is not empty");
        self.memo.insert((token_id, bucket), hit);
        Ok(hit)
    }

    /// Number of tokens of one review whose match reaches `threshold`.
    pub fn count_matched(&mut self, tokens: &[u32], threshold: f64) -> Result<u64, SemlibError> {
        let mut n = 0;
        for (pos, &t) in tokens.iter().enumerate() {
            if self.best(t, pos as u32)?.1 >= threshold {
                n += 1;
            }
        }
        Ok(n)
    }
}

/// Fraction of tokens, over the given reviews, whose nearest prototype has
/// cosine at least `threshold`. Positions restart at 0 for every review.
pub fn match_rate_reviews<'r>(
    reviews: impl IntoIterator<Item = &'r [u32]>,
    lib: &PrototypeLibrary,
    emb: &Embedder,
    threshold: f64,
) -> Result<f64, SemlibError> {
    let mut m = Matcher::new(lib, emb)?;
    let (mut hit, mut total) = (0u64, 0u64);
    for tokens in reviews {
        hit += m.count_matched(tokens, threshold)?;
        total += tokens.len() as u64;
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Match rate over every history token of a trace.
pub fn match_rate(
    trace: &Trace,
    lib: &PrototypeLibrary,
    emb: &Embedder,
    threshold: f64,
) -> Result<f64, SemlibError> {
    let reviews = trace
        .requests
        .iter()
        .flat_map(|r| r.history.iter().map(|h| h.token_ids.as_slice()));
    match_rate_reviews(reviews, lib, emb, threshold)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    embedding: EmbeddingConfig,
    lsh: LshConfig,
    budget: usize,
    n_prototypes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    semlib: Header,
}

fn io_err(e: impl std::fmt::Display) -> SemlibError {
    SemlibError::Io(e.to_string())
}

fn json_line<W: Write, T: Serialize>(w: &mut W, v: &T) -> Result<(), SemlibError> {
    serde_json::to_writer(&mut *w, v).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)
}

/// Header line, then one prototype per line. Hyperplanes are regenerated
/// from the LSH seed on load.
pub fn write_library<W: Write>(mut w: W, lib: &PrototypeLibrary) -> Result<(), SemlibError> {
    json_line(
        &mut w,
        &HeaderLine {
            semlib: Header {
                embedding: lib.emb.clone(),
                lsh: lib.lsh().clone(),
                budget: lib.budget,
                n_prototypes: lib.len(),
            },
        },
    )?;
    for p in &lib.prototypes {
        json_line(&mut w, p)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_library<R: BufRead>(reader: R) -> Result<PrototypeLibrary, SemlibError> {
    let mut header: Option<Header> = None;
    let mut prototypes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |e: serde_json::Error| SemlibError::Parse {
            line: i + 1,
            message: e.to_string(),
        };
        if header.is_none() {
            header = Some(serde_json::from_str::<HeaderLine>(&line).map_err(parse)?.semlib);
            continue;
        }
        let p: Prototype = serde_json::from_str(&line).map_err(parse)?;
        let h = header.as_ref().expect("header read");
        if p.proto_id as usize != prototypes.len() || p.centroid.len() != h.embedding.dim {
            return Err(SemlibError::Parse {
                line: i + 1,
                message: format!("prototype {} out of order or wrong dimension", p.proto_id),
            });
        }
        prototypes.push(p);
    }
    let h = header.ok_or_else(|| SemlibError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    if h.n_prototypes != prototypes.len() {
        return Err(SemlibError::Parse {
            line: prototypes.len() + 1,
            message: format!("expected {} prototypes, found {}", h.n_prototypes, prototypes.len()),
        });
    }
    h.embedding.validate()?;
    PrototypeLibrary::assemble(h.embedding, &h.lsh, h.budget, prototypes)
}

pub fn save_library(path: impl AsRef<std::path::Path>, lib: &PrototypeLibrary) -> Result<(), SemlibError> {
    let f = std::fs::File::create(path.as_ref()).map_err(io_err)?;
    write_library(std::io::BufWriter::new(f), lib)
}

pub fn load_library(path: impl AsRef<std::path::Path>) -> Result<PrototypeLibrary, SemlibError> {
    let f = std::fs::File::open(path.as_ref()).map_err(io_err)?;
    read_library(std::io::BufReader::new(f))
}

/// Cosine between the stored centroids of two prototypes.
pub fn prototype_cosine(lib: &PrototypeLibrary, a: u32, b: u32) -> f64 {
    dot(&lib.prototypes[a as usize].centroid, &lib.prototypes[b as usize].centroid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ReviewRecord;

    fn review(tokens: Vec<u32>) -> ReviewRecord {
        ReviewRecord {
            user_id: "u".into(),
            item_id: "i".into(),
            rating: 3,
            token_ids: tokens,
            timestamp: 0,
        }
    }

    fn emb() -> Embedder {
        Embedder::new(EmbeddingConfig::default()).unwrap()
    }

    #[test]
    fn one_repeated_token() {
        let corpus = ReviewCorpus::new((0..7).map(|_| review(vec![5])).collect());
        let lib = build_library(&corpus, 10, &emb(), &LshConfig::default()).unwrap();
        assert_eq!(lib.len(), 1);
        assert_eq!(lib.prototypes()[0].member_count, 7);
        let (id, c) = match_token(5, 0, &lib, &emb()).unwrap();
        assert_eq!(id, 0);
        assert!((c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn budget_caps_and_no_merge_case() {
        let corpus = ReviewCorpus::new(vec![review((0..300).collect())]);
        let e = emb();
        let full = build_library(&corpus, 10_000, &e, &LshConfig::default()).unwrap();
        assert_eq!(full.len(), 300);
        let small = build_library(&corpus, 40, &e, &LshConfig::default()).unwrap();
        assert_eq!(small.len(), 40);
        let members: u64 = small.prototypes().iter().map(|p| p.member_count).sum();
        assert_eq!(members, 300);
        for p in small.prototypes() {
            assert!((dot(&p.centroid, &p.centroid) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bytes_scale_with_prototypes() {
        let corpus = ReviewCorpus::new(vec![review((0..10).collect())]);
        let lib = build_library(&corpus, 100, &emb(), &LshConfig::default()).unwrap();
        assert_eq!(lib.bytes(275_000), 10 * 275_000);
    }

    #[test]
    fn threshold_above_one_matches_nothing() {
        let corpus = ReviewCorpus::new(vec![review(vec![1, 2, 3])]);
        let e = emb();
        let lib = build_library(&corpus, 100, &e, &LshConfig::default()).unwrap();
        let toks: Vec<&[u32]> = vec![&[1, 2, 3]];
        assert_eq!(match_rate_reviews(toks.clone(), &lib, &e, 0.99).unwrap(), 1.0);
        assert_eq!(match_rate_reviews(toks, &lib, &e, 1.0 + 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn library_round_trips() {
        let corpus = ReviewCorpus::new(vec![review((0..50).collect()), review(vec![3; 20])]);
        let e = emb();
        let lib = build_library(&corpus, 30, &e, &LshConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_library(&mut buf, &lib).unwrap();
        let back = read_library(buf.as_slice()).unwrap();
        assert_eq!(back, lib);
    }

    #[test]
    fn empty_library_errors() {
        let e = emb();
        let lib = build_library(&ReviewCorpus::default(), 5, &e, &LshConfig::default()).unwrap();
        assert_eq!(match_token(1, 0, &lib, &e).unwrap_err(), SemlibError::EmptyLibrary);
        assert!(build_library(&ReviewCorpus::default(), 0, &e, &LshConfig::default()).is_err());
    }
}
