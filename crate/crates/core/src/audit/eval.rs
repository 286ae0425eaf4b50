//! Scenario-level evaluation: majority vote over repeated runs, then
//! precision / recall / F1 over scenarios.

use super::engine::{audit_segments, AuditError, AuditOptions, Providers};
use crate::causal_analyzer::{Judge, ScriptedJudge};
use crate::embedding::EmbeddingProvider;
use crate::provenance_graph::{DcpgGraph, GraphError};
use crate::trace_model::{parse_trace, Policy, Trace, TraceError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One run: a single trace file, or several segments audited with a
/// snapshot handoff between them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunTrace {
    Single(String),
    Segments(Vec<String>),
}

impl RunTrace {
    pub fn paths(&self) -> Vec<&str> {
        match self {
            RunTrace::Single(p) => vec![p.as_str()],
            RunTrace::Segments(ps) => ps.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub scenario_id: String,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub expected_positive: bool,
    /// Ground-truth label id, used by strict attribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_source: Option<String>,
    pub run_traces: Vec<RunTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_in: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: GraphError },
    #[error("scenario {0} has no runs")]
    NoRuns(String),
    #[error("scenario {id}: {source}")]
    Audit { id: String, source: AuditError },
}

fn read(path: &Path) -> Result<Vec<u8>, EvalError> {
    std::fs::read(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_trace(path: &Path) -> Result<Trace, EvalError> {
    parse_trace(&read(path)?).map_err(|source| EvalError::Trace {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(path: &Path) -> Result<Vec<ScenarioRecord>, EvalError> {
    serde_json::from_slice(&read(path)?).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Strict majority: positive in more than half of the runs.
pub fn majority(positive_runs: usize, runs: usize) -> bool {
    runs > 0 && positive_runs > runs / 2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_id: String,
    pub family: String,
    pub expected_positive: bool,
    pub detected: bool,
    pub run_positive: Vec<bool>,
}

#[derive(Clone, Copy)]
pub struct EvalConfig<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    /// Judge for scenarios without their own script.
    pub judge: &'a dyn Judge,
    pub options: AuditOptions,
    /// Require a finding on the ground-truth source label.
    pub strict_attribution: bool,
}

/// Audits every run of `record` and takes the majority vote. Relative
/// paths resolve against `base`.
pub fn audit_scenario(
    record: &ScenarioRecord,
    base: &Path,
    policy: &Policy,
    config: EvalConfig<'_>,
) -> Result<ScenarioOutcome, EvalError> {
    if record.run_traces.is_empty() {
        return Err(EvalError::NoRuns(record.scenario_id.clone()));
    }
    let scripted = match &record.judge_script {
        Some(p) => {
            let path = base.join(p);
            let text = String::from_utf8_lossy(&read(&path)?).into_owned();
            Some(ScriptedJudge::from_json(&text).map_err(|source| EvalError::Json { path, source })?)
        }
        None => None,
    };
    let judge: &dyn Judge = scripted.as_ref().map_or(config.judge, |j| j as &dyn Judge);
    let state = match &record.state_in {
        Some(p) => {
            let path = base.join(p);
            Some(DcpgGraph::load_state(&read(&path)?).map_err(|source| EvalError::Snapshot { path, source })?)
        }
        None => None,
    };

    let mut run_positive = Vec::with_capacity(record.run_traces.len());
    for run in &record.run_traces {
        let segments = run
            .paths()
            .into_iter()
            .map(|p| load_trace(&base.join(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let audited = audit_segments(
            &record.scenario_id,
            &segments,
            state.clone(),
            policy,
            Providers {
                embedder: config.embedder,
                judge,
            },
            config.options,
        )
        .map_err(|source| EvalError::Audit {
            id: record.scenario_id.clone(),
            source,
        })?;
        let positive = audited.report.confirmed().any(|f| {
            !config.strict_attribution || record.expected_source.as_deref() == Some(f.source_label.as_str())
        });
        run_positive.push(positive);
    }
    let positives = run_positive.iter().filter(|p| **p).count();
    Ok(ScenarioOutcome {
        scenario_id: record.scenario_id.clone(),
        family: record.family.clone(),
        expected_positive: record.expected_positive,
        detected: majority(positives, run_positive.len()),
        run_positive,
    })
}

/// Audits scenarios in parallel; outcomes keep manifest order.
pub fn audit_scenarios(
    records: &[ScenarioRecord],
    base: &Path,
    policy: &Policy,
    config: EvalConfig<'_>,
) -> Result<Vec<ScenarioOutcome>, EvalError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(records.len().max(1));
    let per = records.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|r| audit_scenario(r, base, policy, config))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().expect("scenario worker panicked")?);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl EvalSummary {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        EvalSummary {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }

    pub fn scenarios(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Three-decimal rendering; undefined metrics print as `--`.
pub fn format_metric(m: Option<f64>) -> String {
    m.map_or_else(|| "--".to_string(), |v| format!("{v:.3}"))
}

pub fn evaluate<'a>(outcomes: impl IntoIterator<Item = &'a ScenarioOutcome>) -> EvalSummary {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for o in outcomes {
        match (o.expected_positive, o.detected) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    EvalSummary::from_counts(tp, fp, fn_, tn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub families: BTreeMap<String, EvalSummary>,
    pub scenarios: Vec<ScenarioOutcome>,
}

impl EvalReport {
    pub fn new(scenarios: Vec<ScenarioOutcome>) -> Self {
        let mut by_family: BTreeMap<String, Vec<&ScenarioOutcome>> = BTreeMap::new();
        for o in &scenarios {
            by_family.entry(o.family.clone()).or_default().push(o);
        }
        let families = by_family
            .into_iter()
            .map(|(k, v)| (k, evaluate(v)))
            .collect();
        EvalReport {
            summary: evaluate(&scenarios),
            families,
            scenarios,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("eval report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation\n\n| Family | Scen. | TP | FP | FN | TN | P | R | F1 |\n|---|---|---|---|---|---|---|---|---|\n");
        let row = |name: &str, s: &EvalSummary| {
            format!(
                "| {name} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                s.scenarios(),
                s.tp,
                s.fp,
                s.fn_,
                s.tn,
                format_metric(s.precision),
                format_metric(s.recall),
                format_metric(s.f1)
            )
        };
        for (name, s) in &self.families {
            out.push_str(&row(name, s));
        }
        out.push_str(&row("**Overall**", &self.summary));
        out
    }
}
