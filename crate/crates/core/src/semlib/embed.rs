use std::collections::HashMap;
use std::io::BufRead;
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SemlibError;

/// Share of the vector given to the positional code, and its weight
/// relative to the lexical part.
const POSITION_SHARE: usize = 4;
const POSITION_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    Hashed,
    /// JSON lines of `{"token_id": u32, "vector": [f64; lexical_dim]}`.
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    /// Upper bounds (exclusive) of every bucket but the last.
    pub position_buckets: Vec<u32>,
    pub seed: u64,
    pub source: EmbeddingSource,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            position_buckets: vec![16, 64, 256, 1024],
            seed: 0x5e11,
            source: EmbeddingSource::Hashed,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), SemlibError> {
        if self.dim < 8 {
            return Err(SemlibError::InvalidConfig("dim must be at least 8".into()));
        }
        if self.position_buckets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SemlibError::InvalidConfig(
                "position_buckets must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn positional_dim(&self) -> usize {
        (self.dim / POSITION_SHARE) & !1
    }

    pub fn lexical_dim(&self) -> usize {
        self.dim - self.positional_dim()
    }

    pub fn bucket(&self, position: u32) -> u32 {
        self.position_buckets.partition_point(|&b| b <= position) as u32
    }

    pub fn n_buckets(&self) -> u32 {
        self.position_buckets.len() as u32 + 1
    }
}

/// Maps (token, position) to a unit vector: a lexical part concatenated with
/// a sinusoidal code of the position bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    cfg: EmbeddingConfig,
    external: Option<HashMap<u32, Vec<f64>>>,
}

impl Embedder {
    pub fn new(cfg: EmbeddingConfig) -> Result<Self, SemlibError> {
        cfg.validate()?;
        let external = match &cfg.source {
            EmbeddingSource::Hashed => None,
            EmbeddingSource::External { path } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| SemlibError::Io(format!("{}: {e}", path.display())))?;
                Some(read_external(std::io::BufReader::new(f), cfg.lexical_dim())?)
            }
        };
        Ok(Self { cfg, external })
    }

    /// Uses an in-memory lexical table instead of a file.
    pub fn with_table(cfg: EmbeddingConfig, table: HashMap<u32, Vec<f64>>) -> Result<Self, SemlibError> {
        cfg.validate()?;
        let dim = cfg.lexical_dim();
        if let Some((t, _)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(SemlibError::InvalidConfig(format!(
                "vector for token {t} does not have {dim} entries"
            )));
        }
        Ok(Self {
            cfg,
            external: Some(table),
        })
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.cfg
    }

    pub fn embed(&self, token_id: u32, position: u32) -> Result<Vec<f64>, SemlibError> {
        self.embed_bucket(token_id, self.cfg.bucket(position))
    }

    pub fn embed_bucket(&self, token_id: u32, bucket: u32) -> Result<Vec<f64>, SemlibError> {
        let mut v = match &self.external {
            None => hashed_lexical(token_id, self.cfg.seed, self.cfg.lexical_dim()),
            Some(table) => table
                .get(&token_id)
                .cloned()
                .ok_or(SemlibError::UnknownToken(token_id))?,
        };
        normalize(&mut v);
        let mut pos = positional(bucket, self.cfg.positional_dim());
        normalize(&mut pos);
        v.extend(pos.into_iter().map(|x| x * POSITION_WEIGHT));
        normalize(&mut v);
        Ok(v)
    }
}

pub fn embed_token(token_id: u32, position: u32, emb: &Embedder) -> Result<Vec<f64>, SemlibError> {
    emb.embed(token_id, position)
}

/// Gaussian vector from a per-token ChaCha stream.
fn hashed_lexical(token_id: u32, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(token_id as u64);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// sin/cos pairs of the bucket index at geometrically spaced frequencies.
fn positional(bucket: u32, dim: usize) -> Vec<f64> {
    let b = bucket as f64;
    let mut v = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let w = std::f64::consts::FRAC_PI_2 * 2f64.powf(-(i as f64) / 2.0);
        v.push((w * b).sin());
        v.push((w * b).cos());
    }
    v
}

pub fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Deserialize)]
struct ExternalLine {
    token_id: u32,
    vector: Vec<f64>,
}

fn read_external<R: BufRead>(reader: R, dim: usize) -> Result<HashMap<u32, Vec<f64>>, SemlibError> {
    let mut table = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SemlibError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalLine = serde_json::from_str(&line).map_err(|e| SemlibError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.vector.len() != dim {
            return Err(SemlibError::Parse {
                line: i + 1,
                message: format!("expected {dim} entries, got {}", rec.vector.len()),
            });
        }
        table.insert(rec.token_id, rec.vector);
    }
    Ok(table)
}
