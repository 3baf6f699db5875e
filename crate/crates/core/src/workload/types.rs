use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::WorkloadError;

/// One catalog entry. `token_count` covers title, category and description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub token_count: u32,
    pub category: String,
}

/// Item catalog keyed by `item_id`, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<ItemRecord>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: ItemRecord) -> Result<usize, WorkloadError> {
        if record.token_count == 0 {
            return Err(WorkloadError::InvalidRecord(format!(
                "item {} has token_count 0",
                record.item_id
            )));
        }
        if self.index.contains_key(&record.item_id) {
            return Err(WorkloadError::DuplicateItem(record.item_id));
        }
        let idx = self.items.len();
        self.index.insert(record.item_id.clone(), idx);
        self.items.push(record);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn item(&self, idx: usize) -> &ItemRecord {
        &self.items[idx]
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn iter(&self) -> impl Iterator<Item = &ItemRecord> {
        self.items.iter()
    }

    pub fn total_tokens(&self) -> u64 {
        self.items.iter().map(|i| i.token_count as u64).sum()
    }
}

/// A historical user review. Text is carried as token ids only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub token_ids: Vec<u32>,
    pub timestamp: u64,
}

impl ReviewRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=5).contains(&self.rating) {
            return Err(format!("rating {} outside 1..=5", self.rating));
        }
        if self.token_ids.is_empty() {
            return Err("review has no tokens".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReviewCorpus {
    pub reviews: Vec<ReviewRecord>,
}

impl ReviewCorpus {
    pub fn new(reviews: Vec<ReviewRecord>) -> Self {
        Self { reviews }
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.reviews.iter().map(|r| r.token_ids.len() as u64).sum()
    }

    /// Keeps at most `per_rating` reviews of each star rating, in corpus order.
    pub fn sample_per_rating(&self, per_rating: usize) -> ReviewCorpus {
        let mut seen = [0usize; 6];
        let reviews = self
            .reviews
            .iter()
            .filter(|r| {
                let slot = &mut seen[r.rating.min(5) as usize];
                *slot += 1;
                *slot <= per_rating
            })
            .cloned()
            .collect();
        ReviewCorpus { reviews }
    }
}

/// A review as embedded in a request's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item_id: String,
    pub rating: u8,
    pub token_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: String,
    pub arrival_time: f64,
    pub instruction_tokens: u32,
    pub history: Vec<HistoryEntry>,
    pub candidates: Vec<String>,
}

impl Request {
    pub fn history_tokens(&self) -> u64 {
        self.history.iter().map(|h| h.token_ids.len() as u64).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.arrival_time >= 0.0 && self.arrival_time.is_finite()) {
            return Err(format!("arrival_time {} is not a non-negative real", self.arrival_time));
        }
        if self.candidates.is_empty() {
            return Err("request has no candidates".into());
        }
        let mut seen = HashSet::with_capacity(self.candidates.len());
        for c in &self.candidates {
            if !seen.insert(c.as_str()) {
                return Err(format!("duplicate candidate {c}"));
            }
        }
        for h in &self.history {
            if !(1..=5).contains(&h.rating) {
                return Err(format!("history rating {} outside 1..=5", h.rating));
            }
            if h.token_ids.is_empty() {
                return Err("history entry has no tokens".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub source: String,
    pub qps: f64,
    pub seed: u64,
}

/// Arrival-ordered request stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub requests: Vec<Request>,
}

impl Trace {
    pub fn new(meta: TraceMeta, requests: Vec<Request>) -> Result<Self, WorkloadError> {
        if requests.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        for (i, r) in requests.iter().enumerate() {
            r.validate()
                .map_err(|msg| WorkloadError::InvalidRecord(format!("{}: {msg}", r.request_id)))?;
            if i > 0 && r.arrival_time < requests[i - 1].arrival_time {
                return Err(WorkloadError::UnsortedTrace(r.request_id.clone()));
            }
        }
        Ok(Self { meta, requests })
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Same requests with arrival times divided by `factor` (QPS scaled up).
    pub fn with_rate_scaled(&self, factor: f64) -> Trace {
        let mut out = self.clone();
        for r in &mut out.requests {
            r.arrival_time /= factor;
        }
        out.meta.qps *= factor;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentRole {
    Instruction,
    HistoryToken,
    ItemBlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SegmentSource {
    Instruction,
    /// Index into the request's history.
    Review(usize),
    /// Catalog index of the candidate item.
    Item(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub role: SegmentRole,
    pub source: SegmentSource,
    pub start: u64,
    pub len: u64,
}

impl Segment {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }
}

/// Contiguous decomposition of one prompt, positions starting at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub segments: Vec<Segment>,
}

impl PromptLayout {
    pub fn total_tokens(&self) -> u64 {
        self.segments.last().map_or(0, Segment::end)
    }

    pub fn tokens_with_role(&self, role: SegmentRole) -> u64 {
        self.segments.iter().filter(|s| s.role == role).map(|s| s.len).sum()
    }
}
