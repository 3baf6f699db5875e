//! Line-delimited JSON readers and writers for catalogs, review corpora and
//! traces. Every record occupies exactly one line; writers emit fields in
//! declaration order so output is canonical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalog, ItemRecord, Request, ReviewCorpus, ReviewRecord, Trace, TraceMeta, WorkloadError};

fn open(path: &Path) -> Result<BufReader<File>, WorkloadError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| WorkloadError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, WorkloadError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| WorkloadError::Io(format!("{}: {e}", path.display())))
}

/// Iterates non-blank lines with 1-based line numbers.
fn records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), WorkloadError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(WorkloadError::Io(e.to_string()))),
        })
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), WorkloadError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| WorkloadError::Io(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| WorkloadError::Io(e.to_string()))
}

pub fn read_catalog<R: BufRead>(reader: R) -> Result<Catalog, WorkloadError> {
    let mut catalog = Catalog::new();
    for rec in records(reader) {
        let (line, text) = rec?;
        let item: ItemRecord = serde_json::from_str(&text).map_err(|e| WorkloadError::Parse {
            line,
            message: e.to_string(),
        })?;
        catalog.insert(item).map_err(|e| match e {
            WorkloadError::InvalidRecord(message) => WorkloadError::Parse { line, message },
            other => other,
        })?;
    }
    if catalog.is_empty() {
        log::warn!("catalog is empty");
    }
    Ok(catalog)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, WorkloadError> {
    read_catalog(open(path.as_ref())?)
}

pub fn write_catalog<W: Write>(mut w: W, catalog: &Catalog) -> Result<(), WorkloadError> {
    for item in catalog.iter() {
        write_line(&mut w, item)?;
    }
    w.flush().map_err(|e| WorkloadError::Io(e.to_string()))
}

pub fn save_catalog(path: impl AsRef<Path>, catalog: &Catalog) -> Result<(), WorkloadError> {
    write_catalog(create(path.as_ref())?, catalog)
}

pub fn read_reviews<R: BufRead>(reader: R) -> Result<ReviewCorpus, WorkloadError> {
    let mut reviews = Vec::new();
    for rec in records(reader) {
        let (line, text) = rec?;
        let review: ReviewRecord = serde_json::from_str(&text).map_err(|e| WorkloadError::Parse {
            line,
            message: e.to_string(),
        })?;
        review
            .validate()
            .map_err(|message| WorkloadError::Parse { line, message })?;
        reviews.push(review);
    }
    Ok(ReviewCorpus::new(reviews))
}

pub fn load_reviews(path: impl AsRef<Path>) -> Result<ReviewCorpus, WorkloadError> {
    read_reviews(open(path.as_ref())?)
}

pub fn write_reviews<W: Write>(mut w: W, corpus: &ReviewCorpus) -> Result<(), WorkloadError> {
    for r in &corpus.reviews {
        write_line(&mut w, r)?;
    }
    w.flush().map_err(|e| WorkloadError::Io(e.to_string()))
}

pub fn save_reviews(path: impl AsRef<Path>, corpus: &ReviewCorpus) -> Result<(), WorkloadError> {
    write_reviews(create(path.as_ref())?, corpus)
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    trace_meta: TraceMeta,
}

/// Reads a trace. An optional first line `{"trace_meta": {...}}` carries the
/// metadata; without it the source is recorded as `"file"`.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Trace, WorkloadError> {
    let mut meta = None;
    let mut requests: Vec<Request> = Vec::new();
    for rec in records(reader) {
        let (line, text) = rec?;
        if meta.is_none() && requests.is_empty() && text.trim_start().starts_with("{\"trace_meta\"") {
            let m: MetaLine = serde_json::from_str(&text).map_err(|e| WorkloadError::Parse {
                line,
                message: e.to_string(),
            })?;
            meta = Some(m.trace_meta);
            continue;
        }
        let req: Request = serde_json::from_str(&text).map_err(|e| WorkloadError::Parse {
            line,
            message: e.to_string(),
        })?;
        req.validate()
            .map_err(|message| WorkloadError::Parse { line, message })?;
        if let Some(prev) = requests.last() {
            if req.arrival_time < prev.arrival_time {
                return Err(WorkloadError::Parse {
                    line,
                    message: "arrival_time decreases".into(),
                });
            }
        }
        requests.push(req);
    }
    let meta = meta.unwrap_or(TraceMeta {
        source: "file".into(),
        qps: 0.0,
        seed: 0,
    });
    Trace::new(meta, requests)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, WorkloadError> {
    read_trace(open(path.as_ref())?)
}

pub fn write_trace<W: Write>(mut w: W, trace: &Trace) -> Result<(), WorkloadError> {
    write_line(
        &mut w,
        &MetaLine {
            trace_meta: trace.meta.clone(),
        },
    )?;
    for r in &trace.requests {
        write_line(&mut w, r)?;
    }
    w.flush().map_err(|e| WorkloadError::Io(e.to_string()))
}

pub fn save_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<(), WorkloadError> {
    write_trace(create(path.as_ref())?, trace)
}
