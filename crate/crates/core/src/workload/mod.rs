//! Domain data model for recommendation prompts: catalogs, review corpora,
//! request traces, the prompt decomposition used by the serving engine, and a
//! seeded synthetic generator.

mod io;
mod synth;
mod types;

pub use io::{
    load_catalog, load_reviews, load_trace, read_catalog, read_reviews, read_trace, save_catalog,
    save_reviews, save_trace, write_catalog, write_reviews, write_trace,
};
pub use synth::{synthesize_trace, HeldOutReviews, SynthConfig, Synthesizer, TokenDist};
pub use types::{
    Catalog, HistoryEntry, ItemRecord, PromptLayout, Request, ReviewCorpus, ReviewRecord, Segment,
    SegmentRole, SegmentSource, Trace, TraceMeta,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate item {0}")]
    DuplicateItem(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace is not sorted by arrival time at request {0}")]
    UnsortedTrace(String),
    #[error("io: {0}")]
    Io(String),
}

/// Lays out a request as instruction, then one segment per history review in
/// order, then one block per candidate in request order.
pub fn decompose_prompt(
    req: &Request,
    catalog: &Catalog,
    instruction_tokens: u32,
) -> Result<PromptLayout, WorkloadError> {
    let mut segments = Vec::with_capacity(1 + req.history.len() + req.candidates.len());
    let mut pos = 0u64;
    let mut push = |role, source, len: u64| {
        segments.push(Segment {
            role,
            source,
            start: pos,
            len,
        });
        pos += len;
    };
    if instruction_tokens > 0 {
        push(SegmentRole::Instruction, SegmentSource::Instruction, instruction_tokens as u64);
    }
    for (i, h) in req.history.iter().enumerate() {
        push(SegmentRole::HistoryToken, SegmentSource::Review(i), h.token_ids.len() as u64);
    }
    for id in &req.candidates {
        let idx = catalog
            .index_of(id)
            .ok_or_else(|| WorkloadError::UnknownItem(id.clone()))?;
        push(
            SegmentRole::ItemBlock,
            SegmentSource::Item(idx),
            catalog.item(idx).token_count as u64,
        );
    }
    Ok(PromptLayout { segments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        c.insert(ItemRecord {
            item_id: "x".into(),
            token_count: 87,
            category: "games".into(),
        })
        .unwrap();
        c
    }

    fn request(history: Vec<HistoryEntry>, candidates: &[&str]) -> Request {
        Request {
            request_id: "r".into(),
            arrival_time: 0.0,
            instruction_tokens: 207,
            history,
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn offsets_follow_instruction_history_items() {
        let h = HistoryEntry {
            item_id: "x".into(),
            rating: 4,
            token_ids: (0..50).collect(),
        };
        let layout = decompose_prompt(&request(vec![h], &["x"]), &catalog(), 207).unwrap();
        let starts: Vec<u64> = layout.segments.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 207, 257]);
        assert_eq!(layout.total_tokens(), 344);
        assert_eq!(layout.segments[1].role, SegmentRole::HistoryToken);
        assert_eq!(layout.segments[2].source, SegmentSource::Item(0));
    }

    #[test]
    fn no_history_gives_two_segments() {
        let layout = decompose_prompt(&request(vec![], &["x"]), &catalog(), 207).unwrap();
        assert_eq!(layout.segments.len(), 2);
        assert_eq!(layout.total_tokens(), 294);
    }

    #[test]
    fn unknown_candidate() {
        let err = decompose_prompt(&request(vec![], &["nope"]), &catalog(), 207).unwrap_err();
        assert_eq!(err, WorkloadError::UnknownItem("nope".into()));
    }
}
