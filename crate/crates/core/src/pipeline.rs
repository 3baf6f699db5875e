//! File-level steps behind the command-line tool: each reads and writes the
//! documented formats, so the stages can be run separately or chained.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::engine::{replay, simulate, EngineError, EngineMode, HistoryMatches, Run, SimInput};
use crate::metrics::{cdf, compare, summarize, CdfSeries, Comparison, MetricsError, Summary};
use crate::placement::{
    footprint, place_items, random_placement, PlacementError, PlacementPlan, ShardFootprint,
    UsageCorpus,
};
use crate::scheduler::Policy;
use crate::semlib::{build_library, Embedder, PrototypeLibrary, SemlibError};
use crate::workload::{
    load_catalog, load_reviews, load_trace, save_catalog, save_reviews, save_trace, Catalog,
    ReviewCorpus, Synthesizer, Trace, WorkloadError,
};

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const REVIEWS_FILE: &str = "reviews.jsonl";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Semlib(#[from] SemlibError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(String),
}

impl PipelineError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Workload(_) => "workload",
            PipelineError::Placement(_) => "placement",
            PipelineError::Semlib(_) => "semlib",
            PipelineError::Engine(_) => "engine",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Usage(_) => "usage",
            PipelineError::Io(_) => "io",
        }
    }
}

/// Catalog, historical usage and the request trace to serve.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub reviews: ReviewCorpus,
    /// Past requests, used for placement only.
    pub history: Trace,
    pub trace: Trace,
}

impl Dataset {
    pub fn usage(&self) -> UsageCorpus<'_> {
        UsageCorpus::new(&self.reviews, std::slice::from_ref(&self.history))
    }
}

pub fn synthesize(cfg: &Config) -> Result<Dataset, PipelineError> {
    let s = Synthesizer::new(cfg.workload.clone(), cfg.seed)?;
    Ok(Dataset {
        catalog: s.catalog().clone(),
        reviews: s.corpus(),
        history: s.history_trace(),
        trace: s.trace(),
    })
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    save_catalog(dir.join(CATALOG_FILE), &data.catalog)?;
    save_reviews(dir.join(REVIEWS_FILE), &data.reviews)?;
    save_trace(dir.join(HISTORY_FILE), &data.history)?;
    save_trace(dir.join(TRACE_FILE), &data.trace)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    Ok(Dataset {
        catalog: load_catalog(dir.join(CATALOG_FILE))?,
        reviews: load_reviews(dir.join(REVIEWS_FILE))?,
        history: load_trace(dir.join(HISTORY_FILE))?,
        trace: load_trace(dir.join(TRACE_FILE))?,
    })
}

/// Similarity-aware placement, or the seeded random baseline.
pub fn build_placement(cfg: &Config, data: &Dataset, random: bool) -> Result<PlacementPlan, PipelineError> {
    let plan = if random {
        random_placement(&data.catalog, data.usage(), &cfg.placement, cfg.seed)?
    } else {
        place_items(&data.catalog, data.usage(), &cfg.placement)?
    };
    Ok(plan)
}

pub fn build_semlib(cfg: &Config, data: &Dataset) -> Result<PrototypeLibrary, PipelineError> {
    let emb = Embedder::new(cfg.semlib.embedding.clone())?;
    Ok(build_library(&data.reviews, cfg.semlib.budget, &emb, &cfg.semlib.lsh)?)
}

/// Knobs the command line may override on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct SimOverrides {
    pub mode: Option<EngineMode>,
    pub policy: Option<Policy>,
    /// Multiplies the trace's arrival rate.
    pub qps_scale: Option<f64>,
    /// Sets both recompute ratios.
    pub ratio: Option<f64>,
}

pub fn run_simulation(
    cfg: &Config,
    data: &Dataset,
    plan: &PlacementPlan,
    library: Option<&PrototypeLibrary>,
    ov: &SimOverrides,
    reference: Option<&Run>,
) -> Result<Run, PipelineError> {
    let mut ecfg = cfg.engine_config();
    if let Some(m) = ov.mode {
        ecfg.mode = m;
    }
    if let Some(r) = ov.ratio {
        ecfg.recompute.r_rev = r;
        ecfg.recompute.r_item = r;
    }
    let policy = ov.policy.unwrap_or(cfg.scheduler);
    let scaled;
    let trace = match ov.qps_scale {
        Some(f) if !(f > 0.0 && f.is_finite()) => {
            return Err(PipelineError::Usage(format!("qps scale {f} must be positive")))
        }
        Some(f) => {
            scaled = data.trace.with_rate_scaled(f);
            &scaled
        }
        None => &data.trace,
    };
    let assignment = plan.for_catalog(&data.catalog);
    let history = match library {
        Some(lib) if ecfg.mode == EngineMode::RcLlm && !lib.is_empty() => {
            let emb = Embedder::new(lib.embedding().clone())?;
            Some(HistoryMatches::compute(trace, lib, &emb)?)
        }
        _ => None,
    };
    let input = SimInput {
        trace,
        catalog: &data.catalog,
        assignment: &assignment,
        history: history.as_ref(),
    };
    let run = match reference {
        Some(r) => replay(input, r, &ecfg)?,
        None => simulate(input, policy, &ecfg)?,
    };
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub k: u32,
    pub total_tokens: u64,
    pub replicated_tokens: u64,
    pub edge_cut: u64,
    pub footprint: Vec<ShardFootprint>,
}

/// Everything `report` emits, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdf: Option<CdfSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlanReport>,
}

pub fn plan_report(plan: &PlacementPlan) -> PlanReport {
    PlanReport {
        k: plan.k,
        total_tokens: plan.items().map(|(it, _)| it.token_count as u64).sum(),
        replicated_tokens: plan.replicated_tokens(),
        edge_cut: plan.edge_cut,
        footprint: footprint(plan, plan.kv_bytes_per_token),
    }
}

pub fn report(
    run: Option<&Run>,
    plan: Option<&PlacementPlan>,
    baseline: Option<&Run>,
    cdf_points: usize,
) -> Result<Report, PipelineError> {
    if run.is_none() && plan.is_none() {
        return Err(PipelineError::Usage("report needs a run, a plan or both".into()));
    }
    if baseline.is_some() && run.is_none() {
        return Err(PipelineError::Usage("a baseline needs a run to compare".into()));
    }
    let summary = run.map(|r| summarize(r, plan, baseline)).transpose()?;
    let cdf = run.map(|r| cdf(&r.records, cdf_points)).transpose()?;
    Ok(Report {
        summary,
        cdf,
        placement: plan.map(plan_report),
    })
}

pub fn compare_runs(a: &Run, b: &Run) -> Result<Comparison, PipelineError> {
    Ok(compare(a, b)?)
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::Io(e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}
