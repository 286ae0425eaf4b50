use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use taintaudit_core::audit::{
    audit_scenarios, audit_segments, load_manifest, load_trace, render_markdown, replay_graph, EvalConfig,
    EvalReport, AuditOptions, Providers,
};
use taintaudit_core::causal_analyzer::{CausalError, HttpJudge, HttpJudgeConfig, Judge, JudgePrompt, ProbeKey, ScriptedJudge};
use taintaudit_core::embedding::{EmbeddingProvider, HashingEmbedder, RemoteEmbedder, RemoteEmbeddingConfig};
use taintaudit_core::provenance_graph::{enrich_memory_writes, DcpgGraph};
use taintaudit_core::trace_model::{parse_policy, serialize_trace, Policy, Trace};

const EXIT_FINDINGS: u8 = 3;

#[derive(Parser)]
#[command(name = "taintaudit", version, about = "Offline provenance auditor for agent tool-call traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Md,
}

#[derive(clap::Args)]
struct ProviderArgs {
    /// `script:<file>` for a scripted judge, or an HTTP endpoint URL.
    #[arg(long)]
    judge: Option<String>,
    /// `local` for the built-in hashing embedder, or an HTTP endpoint URL.
    #[arg(long, default_value = "local")]
    embeddings: String,
    /// Omit timing from reports so identical inputs give identical output.
    #[arg(long)]
    deterministic: bool,
    /// Concurrent judge requests per sink.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Audit a trace file, or a directory of trace segments in name order.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        state_in: Option<PathBuf>,
        #[arg(long)]
        state_out: Option<PathBuf>,
        #[command(flatten)]
        providers: ProviderArgs,
        #[arg(long, value_enum, default_value = "json")]
        report: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a scenario manifest by majority vote over runs.
    Eval {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
        /// Count a run only if it flags the ground-truth source.
        #[arg(long)]
        strict_attribution: bool,
        #[arg(long, value_enum, default_value = "json")]
        report: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the provenance graph for a trace and export its snapshot.
    Graph {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        export: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        state_in: Option<PathBuf>,
        /// Also write the trace with taint metadata on memory writes.
        #[arg(long)]
        enriched_trace: Option<PathBuf>,
    },
    /// Write the seeded synthetic scenario pack.
    GenSuite {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Stand-in when no judge is configured: every probe comes back degraded.
struct NoJudge;

impl Judge for NoJudge {
    fn complete(&self, _: &JudgePrompt, _: &ProbeKey) -> Result<String, CausalError> {
        Err(CausalError::JudgeUnavailable("no judge configured".into()))
    }
}

fn make_judge(choice: Option<&str>, max_in_flight: usize) -> Result<Box<dyn Judge>> {
    Ok(match choice {
        None => Box::new(NoJudge),
        Some(s) => match s.strip_prefix("script:") {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading judge script {path}"))?;
                Box::new(ScriptedJudge::from_json(&text).with_context(|| format!("parsing judge script {path}"))?)
            }
            None if s.starts_with("http://") || s.starts_with("https://") => {
                let mut config = HttpJudgeConfig::new(s);
                config.max_in_flight = max_in_flight;
                Box::new(HttpJudge::new(config))
            }
            None => bail!("--judge must be script:<file> or an http(s) URL, got {s:?}"),
        },
    })
}

fn make_embedder(choice: &str) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match choice {
        "local" => Box::new(HashingEmbedder::new()),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            Box::new(RemoteEmbedder::new(RemoteEmbeddingConfig::new(url)))
        }
        other => bail!("--embeddings must be local or an http(s) URL, got {other:?}"),
    })
}

fn load_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading policy {}", path.display()))?;
    parse_policy(&text).with_context(|| format!("invalid policy {}", path.display()))
}

fn load_state(path: Option<&Path>) -> Result<Option<DcpgGraph>> {
    path.map(|p| {
        let bytes = std::fs::read(p).with_context(|| format!("reading snapshot {}", p.display()))?;
        DcpgGraph::load_state(&bytes).with_context(|| format!("loading snapshot {}", p.display()))
    })
    .transpose()
}

/// A file is one segment; a directory holds `.jsonl` segments in name order.
fn load_segments(path: &Path) -> Result<Vec<Trace>> {
    if !path.is_dir() {
        return Ok(vec![load_trace(path)?]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .jsonl traces in {}", path.display());
    }
    files.iter().map(|f| load_trace(f).map_err(Into::into)).collect()
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn options(p: &ProviderArgs) -> AuditOptions {
    AuditOptions {
        deterministic: p.deterministic,
        max_in_flight: p.max_in_flight.max(1),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Audit {
            trace,
            policy,
            state_in,
            state_out,
            providers,
            report,
            out,
        } => {
            let policy = load_policy(&policy)?;
            let segments = load_segments(&trace)?;
            let state = load_state(state_in.as_deref())?;
            let embedder = make_embedder(&providers.embeddings)?;
            let judge = make_judge(providers.judge.as_deref(), providers.max_in_flight)?;
            let run = audit_segments(
                &trace.display().to_string(),
                &segments,
                state,
                &policy,
                Providers {
                    embedder: embedder.as_ref(),
                    judge: judge.as_ref(),
                },
                options(&providers),
            )?;
            if let Some(p) = state_out {
                std::fs::write(&p, run.graph.save_state()).with_context(|| format!("writing {}", p.display()))?;
            }
            let body = match report {
                ReportFormat::Json => run.report.to_json(),
                ReportFormat::Md => render_markdown(&run.report),
            };
            emit(out.as_deref(), &body)?;
            Ok(if run.report.findings.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FINDINGS)
            })
        }
        Command::Eval {
            scenarios,
            policy,
            providers,
            strict_attribution,
            report,
            out,
        } => {
            let policy = load_policy(&policy)?;
            let records = load_manifest(&scenarios)?;
            let base = scenarios.parent().unwrap_or(Path::new("."));
            let embedder = make_embedder(&providers.embeddings)?;
            let judge = make_judge(providers.judge.as_deref(), providers.max_in_flight)?;
            let outcomes = audit_scenarios(
                &records,
                base,
                &policy,
                EvalConfig {
                    embedder: embedder.as_ref(),
                    judge: judge.as_ref(),
                    options: options(&providers),
                    strict_attribution,
                },
            )?;
            let summary = EvalReport::new(outcomes);
            let body = match report {
                ReportFormat::Json => summary.to_json(),
                ReportFormat::Md => summary.to_markdown(),
            };
            emit(out.as_deref(), &body)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Graph {
            trace,
            export,
            policy,
            state_in,
            enriched_trace,
        } => {
            let policy = match policy {
                Some(p) => load_policy(&p)?,
                None => Policy::default(),
            };
            let segments = load_segments(&trace)?;
            let graph = replay_graph(&segments, load_state(state_in.as_deref())?, &policy)?;
            std::fs::write(&export, graph.save_state()).with_context(|| format!("writing {}", export.display()))?;
            if let Some(p) = enriched_trace {
                let events: Vec<_> = segments.iter().flat_map(|s| s.replay_order().into_iter().cloned()).collect();
                let enriched = enrich_memory_writes(&events, &graph);
                std::fs::write(&p, serialize_trace(&enriched)).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::GenSuite { seed, out } => {
            let suite = taintaudit_core::audit::generate_mini_suite(seed, &out)
                .with_context(|| format!("writing suite to {}", out.display()))?;
            eprintln!("wrote {} scenarios to {}", suite.records.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
