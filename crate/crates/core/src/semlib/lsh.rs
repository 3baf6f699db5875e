use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::embed::dot;
use super::SemlibError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshConfig {
    pub n_tables: usize,
    pub bits_per_table: u32,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self {
            n_tables: 8,
            bits_per_table: 16,
            seed: 0x15b,
        }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<(), SemlibError> {
        if self.n_tables == 0 {
            return Err(SemlibError::InvalidConfig("n_tables must be at least 1".into()));
        }
        if !(1..=64).contains(&self.bits_per_table) {
            return Err(SemlibError::InvalidConfig("bits_per_table must lie in 1..=64".into()));
        }
        Ok(())
    }
}

/// Random signed hyperplanes, one set per table.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplanes {
    cfg: LshConfig,
    dim: usize,
    planes: Vec<f64>,
}

impl Hyperplanes {
    pub fn new(cfg: &LshConfig, dim: usize) -> Result<Self, SemlibError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.n_tables * cfg.bits_per_table as usize * dim;
        let planes = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self {
            cfg: cfg.clone(),
            dim,
            planes,
        })
    }

    pub fn config(&self) -> &LshConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Signature of `v` in one table: bit b is set when `v` lies on the
    /// positive side of hyperplane b.
    pub fn table_key(&self, v: &[f64], table: usize) -> u64 {
        let bits = self.cfg.bits_per_table as usize;
        let mut key = 0u64;
        for b in 0..bits {
            let off = (table * bits + b) * self.dim;
            if dot(&self.planes[off..off + self.dim], v) >= 0.0 {
                key |= 1 << b;
            }
        }
        key
    }

    pub fn signature(&self, v: &[f64]) -> Vec<u64> {
        (0..self.cfg.n_tables).map(|t| self.table_key(v, t)).collect()
    }
}

/// Cosine LSH index over unit vectors tagged with a position bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex {
    planes: Hyperplanes,
    tables: Vec<HashMap<u64, Vec<u32>>>,
    vectors: Vec<Vec<f64>>,
    /// Ids per position bucket, ascending, for the fallback scan.
    by_bucket: HashMap<u32, Vec<u32>>,
}

impl LshIndex {
    pub fn build(planes: Hyperplanes, vectors: Vec<Vec<f64>>, buckets: Vec<u32>) -> Self {
        assert_eq!(vectors.len(), buckets.len());
        let mut tables = vec![HashMap::new(); planes.cfg.n_tables];
        for (id, v) in vectors.iter().enumerate() {
            for (t, table) in tables.iter_mut().enumerate() {
                table
                    .entry(planes.table_key(v, t))
                    .or_insert_with(Vec::new)
                    .push(id as u32);
            }
        }
        let mut by_bucket: HashMap<u32, Vec<u32>> = HashMap::new();
        for (id, &b) in buckets.iter().enumerate() {
            by_bucket.entry(b).or_default().push(id as u32);
        }
        Self {
            planes,
            tables,
            vectors,
            by_bucket,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        &self.vectors[id as usize]
    }

    pub fn hyperplanes(&self) -> &Hyperplanes {
        &self.planes
    }

    /// Union of the ids sharing a table key with `q`, ascending.
    pub fn candidates(&self, q: &[f64]) -> Vec<u32> {
        let mut out = Vec::new();
        for (t, table) in self.tables.iter().enumerate() {
            if let Some(ids) = table.get(&self.planes.table_key(q, t)) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn best_of(&self, q: &[f64], ids: impl Iterator<Item = u32>) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for id in ids {
            let c = dot(q, &self.vectors[id as usize]);
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((id, c));
            }
        }
        best
    }

    /// Max-cosine id among the LSH candidates. Without candidates, scans the
    /// vectors in `bucket`, then everything. Ties go to the smaller id.
    pub fn nearest(&self, q: &[f64], bucket: u32) -> Option<(u32, f64)> {
        let cands = self.candidates(q);
        if !cands.is_empty() {
            return self.best_of(q, cands.into_iter());
        }
        let same = self.by_bucket.get(&bucket).map_or(&[][..], |v| v.as_slice());
        self.best_of(q, same.iter().copied())
            .or_else(|| self.best_of(q, 0..self.vectors.len() as u32))
    }

    /// Exact nearest neighbour by linear scan.
    pub fn exact_nearest(&self, q: &[f64]) -> Option<(u32, f64)> {
        self.best_of(q, 0..self.vectors.len() as u32)
    }
}
