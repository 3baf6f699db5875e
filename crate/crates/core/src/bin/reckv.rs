use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reckv::config::Config;
use reckv::engine::{load_run, save_run, EngineMode};
use reckv::pipeline::{self, PipelineError, SimOverrides};
use reckv::placement::{load_plan, save_plan};
use reckv::scheduler::Policy;
use reckv::semlib::{load_library, save_library};

#[derive(Parser)]
#[command(name = "reckv", version, about = "Beyond-prefix KV-cache serving simulator")]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate catalog, review corpus, history trace and request trace.
    SynthTrace {
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition the catalog into per-node item manifests.
    BuildPlacement {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<u32>,
        /// Seeded random placement instead of the partitioner.
        #[arg(long)]
        random: bool,
    },
    /// Build the semantic prototype library from the review corpus.
    BuildSemlib {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Serve the trace and write one record per request.
    Simulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        semlib: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// rcllm, prefix_cache or full_recompute.
        #[arg(long)]
        mode: Option<String>,
        /// affinity, affinity:A,B, hit_only, load_only, least_loaded, round_robin.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        qps_scale: Option<f64>,
        /// Sets both recompute ratios.
        #[arg(long)]
        ratio: Option<f64>,
        /// Reuse the routing decisions of an earlier run.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Speedup of run A over baseline run B.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary, CDF and footprint as JSON.
    Report {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        cdf_points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<(), PipelineError> {
    match out {
        Some(p) => pipeline::write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Io(e.to_string()))?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(PipelineError::Io(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let usage = |e: &dyn std::fmt::Display| PipelineError::Usage(e.to_string());
    match cli.cmd {
        Cmd::SynthTrace { out } => pipeline::save_dataset(&out, &pipeline::synthesize(&cfg)?),
        Cmd::BuildPlacement { data, out, k, random } => {
            if let Some(k) = k {
                cfg.placement.k = k;
            }
            let plan = pipeline::build_placement(&cfg, &pipeline::load_dataset(&data)?, random)?;
            Ok(save_plan(out, &plan)?)
        }
        Cmd::BuildSemlib { data, out, budget } => {
            if let Some(b) = budget {
                cfg.semlib.budget = b;
            }
            let lib = pipeline::build_semlib(&cfg, &pipeline::load_dataset(&data)?)?;
            Ok(save_library(out, &lib)?)
        }
        Cmd::Simulate {
            data,
            plan,
            semlib,
            out,
            mode,
            policy,
            qps_scale,
            ratio,
            replay,
        } => {
            let ov = SimOverrides {
                mode: mode.map(|m| EngineMode::parse(&m)).transpose().map_err(|e| usage(&e))?,
                policy: policy.map(|p| Policy::parse(&p)).transpose().map_err(|e| usage(&e))?,
                qps_scale,
                ratio,
            };
            let data = pipeline::load_dataset(&data)?;
            let plan = load_plan(plan)?;
            let lib = semlib.map(load_library).transpose()?;
            let reference = replay.map(load_run).transpose()?;
            let run = pipeline::run_simulation(&cfg, &data, &plan, lib.as_ref(), &ov, reference.as_ref())?;
            Ok(save_run(out, &run)?)
        }
        Cmd::Compare { a, b, out } => {
            let c = pipeline::compare_runs(&load_run(a)?, &load_run(b)?)?;
            emit(out.as_deref(), &c)
        }
        Cmd::Report {
            run,
            plan,
            baseline,
            cdf_points,
            out,
        } => {
            let run = run.map(load_run).transpose()?;
            let plan = plan.map(load_plan).transpose()?;
            let baseline = baseline.map(load_run).transpose()?;
            let r = pipeline::report(run.as_ref(), plan.as_ref(), baseline.as_ref(), cdf_points)?;
            emit(out.as_deref(), &r)
        }
    }
}

fn error_record(kind: &str, message: &str) {
    let rec = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{rec}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_record("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_record(e.kind(), &e.to_string());
            ExitCode::from(if matches!(e, PipelineError::Usage(_)) { 2 } else { 1 })
        }
    }
}
