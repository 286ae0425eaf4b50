//! End-to-end trace audit: replay into the DCPG, run the explicit cascade
//! at each sink, fall back to counterfactual probes when it finds nothing.

use crate::causal_analyzer::{
    build_neutralized_context, probe_all, CausalError, Judge, JudgePrompt, JudgeVerdict, Probe, ProbeKey,
};
use crate::embedding::{CountingEmbedder, EmbeddingProvider, MemoEmbedder};
use crate::explicit_tracker::{run_cascade_views, CascadeFlags, CascadeOutcome, Tier, TierResult};
use crate::provenance_graph::{
    memory_key_for_read, memory_key_for_write, DcpgGraph, EdgeTier, GraphError, Lineage, RECORD_KEY_ARG,
    TAINT_METADATA_KEY,
};
use crate::trace_model::{classify, EventKind, EventRef, Policy, ToolEvent, Trace};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SinkRef {
    pub session: String,
    pub index: u64,
    pub tool: String,
}

impl SinkRef {
    fn of(event: &ToolEvent) -> Self {
        SinkRef {
            session: event.session_id.clone(),
            index: event.index,
            tool: event.tool_name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlowClass {
    ExplicitCanary,
    ExplicitLcs,
    ExplicitSemantic,
    ExplicitCoverage,
    ImplicitControl,
}

impl FlowClass {
    pub fn from_tier(tier: Tier) -> Option<FlowClass> {
        match tier {
            Tier::Canary => Some(FlowClass::ExplicitCanary),
            Tier::Lcs => Some(FlowClass::ExplicitLcs),
            Tier::Semantic => Some(FlowClass::ExplicitSemantic),
            Tier::Coverage => Some(FlowClass::ExplicitCoverage),
            Tier::None => None,
        }
    }

    pub fn is_explicit(self) -> bool {
        self != FlowClass::ImplicitControl
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowClass::ExplicitCanary => "ExplicitCanary",
            FlowClass::ExplicitLcs => "ExplicitLcs",
            FlowClass::ExplicitSemantic => "ExplicitSemantic",
            FlowClass::ExplicitCoverage => "ExplicitCoverage",
            FlowClass::ImplicitControl => "ImplicitControl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Tier {
        #[serde(flatten)]
        result: TierResult,
        /// Sink argument that matched; `None` for the joined arguments.
        view: Option<String>,
    },
    Judge {
        #[serde(flatten)]
        verdict: JudgeVerdict,
        /// String overlap at or above the implicit-flow string threshold.
        lexical_overlap: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub sink_ref: SinkRef,
    pub source_label: String,
    pub flow_class: FlowClass,
    pub confidence: f64,
    pub provenance_path: Vec<String>,
    pub evidence: Evidence,
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradedStage {
    Embedding,
    Judge,
}

/// A (sink, label) pair whose analysis was incomplete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradedEntry {
    pub sink_ref: SinkRef,
    pub source_label: String,
    pub stage: DegradedStage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditStats {
    pub events: u64,
    pub sinks: u64,
    pub probes: u64,
    pub provider_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub trace: String,
    pub findings: Vec<Finding>,
    pub degraded: Vec<DegradedEntry>,
    pub stats: AuditStats,
}

impl AuditReport {
    /// Findings that count towards a positive verdict.
    pub fn confirmed(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| !f.degraded)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub judge: &'a dyn Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditOptions {
    /// Leave timing out of the report so identical inputs give identical bytes.
    pub deterministic: bool,
    /// Concurrent judge probes per sink.
    pub max_in_flight: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            deterministic: false,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub struct AuditRun {
    pub report: AuditReport,
    pub graph: DcpgGraph,
}

struct CountingJudge<'a> {
    inner: &'a dyn Judge,
    calls: AtomicU64,
}

impl Judge for CountingJudge<'_> {
    fn complete(&self, prompt: &JudgePrompt, key: &ProbeKey) -> Result<String, CausalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt, key)
    }
}

/// Sink text views: all arguments joined, then each argument on its own
/// when there is more than one. Taint metadata and record keys are skipped.
pub fn sink_views(event: &ToolEvent) -> Vec<(Option<String>, String)> {
    let args: Vec<(&String, &String)> = event
        .args
        .iter()
        .filter(|(k, _)| k.as_str() != TAINT_METADATA_KEY && k.as_str() != RECORD_KEY_ARG)
        .collect();
    let joined = args.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join("\n");
    let mut views = vec![(None, joined)];
    if args.len() > 1 {
        views.extend(args.iter().map(|(k, v)| (Some(k.to_string()), v.to_string())));
    }
    views
}

/// Audits a single trace with no prior state.
pub fn audit_trace(
    name: &str,
    trace: &Trace,
    policy: &Policy,
    providers: Providers<'_>,
    options: AuditOptions,
) -> Result<AuditRun, AuditError> {
    audit_segments(name, std::slice::from_ref(trace), None, policy, providers, options)
}

/// Audits trace segments in order. The graph is saved and reloaded
/// between segments, the same handoff a persisted snapshot goes through.
pub fn audit_segments(
    name: &str,
    segments: &[Trace],
    state_in: Option<DcpgGraph>,
    policy: &Policy,
    providers: Providers<'_>,
    options: AuditOptions,
) -> Result<AuditRun, AuditError> {
    let started = Instant::now();
    let embedder = MemoEmbedder::new(CountingEmbedder::new(providers.embedder));
    let judge = CountingJudge {
        inner: providers.judge,
        calls: AtomicU64::new(0),
    };
    let mut auditor = Auditor {
        policy,
        embedder: &embedder,
        judge: &judge,
        options,
        graph: state_in.unwrap_or_default(),
        by_node: HashMap::new(),
        context: HashMap::new(),
        findings: Vec::new(),
        degraded: Vec::new(),
        stats: AuditStats::default(),
    };
    for (i, segment) in segments.iter().enumerate() {
        if i > 0 {
            auditor.graph = DcpgGraph::load_state(&auditor.graph.save_state())?;
        }
        for event in segment.replay_order() {
            auditor.step(event)?;
        }
    }
    let mut stats = auditor.stats;
    stats.provider_calls = embedder.inner().calls() + judge.calls.load(Ordering::SeqCst);
    if !options.deterministic {
        stats.wall_ms = Some(u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX));
    }
    Ok(AuditRun {
        report: AuditReport {
            trace: name.to_string(),
            findings: auditor.findings,
            degraded: auditor.degraded,
            stats,
        },
        graph: auditor.graph,
    })
}

/// Replays segments into a graph without auditing sinks.
pub fn replay_graph(segments: &[Trace], state_in: Option<DcpgGraph>, policy: &Policy) -> Result<DcpgGraph, AuditError> {
    let mut graph = state_in.unwrap_or_default();
    for (i, segment) in segments.iter().enumerate() {
        if i > 0 {
            graph = DcpgGraph::load_state(&graph.save_state())?;
        }
        for event in segment.replay_order() {
            let kinds = classify(event, policy);
            let node = graph.record_event(event, kinds)?;
            apply_memory(&mut graph, &node, event, kinds)?;
        }
    }
    Ok(graph)
}

fn apply_memory(
    graph: &mut DcpgGraph,
    node: &str,
    event: &ToolEvent,
    kinds: crate::trace_model::EventKinds,
) -> Result<(), GraphError> {
    if kinds.contains(EventKind::MemoryRead) {
        graph.rehydrate_on_read(node, &memory_key_for_read(event))?;
    }
    if kinds.contains(EventKind::MemoryWrite) {
        graph.annotate_memory_write(node, &memory_key_for_write(event))?;
    }
    Ok(())
}

struct Auditor<'a> {
    policy: &'a Policy,
    embedder: &'a dyn EmbeddingProvider,
    judge: &'a dyn Judge,
    options: AuditOptions,
    graph: DcpgGraph,
    by_node: HashMap<String, ToolEvent>,
    // Events seen so far in each session, in order.
    context: HashMap<String, Vec<ToolEvent>>,
    findings: Vec<Finding>,
    degraded: Vec<DegradedEntry>,
    stats: AuditStats,
}

struct Candidate<'l> {
    lineage: &'l Lineage,
    entry: Option<EventRef>,
    outcome: CascadeOutcome,
}

impl Auditor<'_> {
    fn step(&mut self, event: &ToolEvent) -> Result<(), AuditError> {
        let kinds = classify(event, self.policy);
        let node = self.graph.record_event(event, kinds)?;
        self.stats.events += 1;
        // A retrieval restores labels but is never itself an audit point.
        if kinds.contains(EventKind::Sink) && !kinds.contains(EventKind::MemoryRead) {
            self.stats.sinks += 1;
            self.audit_sink(&node, event)?;
        }
        apply_memory(&mut self.graph, &node, event, kinds)?;
        self.by_node.insert(node, event.clone());
        self.context.entry(event.session_id.clone()).or_default().push(event.clone());
        Ok(())
    }

    /// First node on the path inside the sink's session: where the label
    /// entered the context the sink was decided in.
    fn entry_node(&self, lineage: &Lineage, session: &str) -> Option<EventRef> {
        lineage
            .path
            .iter()
            .filter_map(|id| self.graph.node(id))
            .find(|n| n.session_id == session)
            .map(|n| EventRef {
                session_id: n.session_id.clone(),
                index: n.event_index,
            })
    }

    fn audit_sink(&mut self, node: &str, sink: &ToolEvent) -> Result<(), AuditError> {
        let lineage = self.graph.lineage_for_sink(node)?;
        if lineage.is_empty() {
            return Ok(());
        }
        let views = sink_views(sink);
        let view_texts: Vec<&str> = views.iter().map(|(_, t)| t.as_str()).collect();
        let profile = &self.policy.thresholds;
        let sink_ref = SinkRef::of(sink);

        let candidates: Vec<Candidate> = lineage
            .iter()
            .map(|l| {
                let entry = self.entry_node(l, &sink.session_id);
                let entry_event = entry
                    .as_ref()
                    .and_then(|r| self.by_node.get(&crate::provenance_graph::node_id(&r.session_id, r.index)));
                let source_text = entry_event.map_or("", |e| e.result.as_str());
                let is_rag = l.crosses_memory
                    || entry_event.is_some_and(|e| self.policy.kinds_of(&e.tool_name).contains(EventKind::MemoryRead));
                let flags = CascadeFlags {
                    is_rag_lineage: is_rag,
                    is_trusted_source: self.policy.is_trusted(&l.label.origin_tool),
                };
                let outcome = run_cascade_views(
                    &l.label,
                    source_text,
                    &view_texts,
                    self.embedder,
                    profile,
                    self.policy.chunk_sentences,
                    flags,
                );
                Candidate { lineage: l, entry, outcome }
            })
            .collect();

        for c in &candidates {
            if let Some(reason) = &c.outcome.degraded {
                self.degraded.push(DegradedEntry {
                    sink_ref: sink_ref.clone(),
                    source_label: c.lineage.label.id.clone(),
                    stage: DegradedStage::Embedding,
                    reason: reason.clone(),
                });
            }
        }

        let mut found = Vec::new();
        for c in &candidates {
            if let Some(class) = FlowClass::from_tier(c.outcome.result.tier) {
                found.push(Finding {
                    sink_ref: sink_ref.clone(),
                    source_label: c.lineage.label.id.clone(),
                    flow_class: class,
                    confidence: c.outcome.result.score.clamp(0.0, 1.0),
                    provenance_path: c.lineage.path.clone(),
                    evidence: Evidence::Tier {
                        result: c.outcome.result.clone(),
                        view: c.outcome.view.and_then(|i| views[i].0.clone()),
                    },
                    degraded: false,
                });
            }
        }
        if found.is_empty() {
            found = self.probe(sink, &sink_ref, &candidates);
        }

        found.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then_with(|| a.source_label.cmp(&b.source_label))
        });
        for f in &found {
            let tier = match f.flow_class {
                FlowClass::ExplicitCanary => EdgeTier::Canary,
                FlowClass::ExplicitLcs => EdgeTier::Lcs,
                FlowClass::ExplicitSemantic => EdgeTier::Semantic,
                FlowClass::ExplicitCoverage => EdgeTier::Coverage,
                FlowClass::ImplicitControl => EdgeTier::Implicit,
            };
            self.graph
                .mark_detection(node, &f.provenance_path, &f.source_label, tier, f.confidence);
        }
        self.findings.extend(found);
        Ok(())
    }

    fn probe(&mut self, sink: &ToolEvent, sink_ref: &SinkRef, candidates: &[Candidate]) -> Vec<Finding> {
        let prefix: &[ToolEvent] = self.context.get(&sink.session_id).map_or(&[], Vec::as_slice);
        let mut probes = Vec::new();
        let mut probed = Vec::new();
        for c in candidates {
            let built = c
                .entry
                .as_ref()
                .ok_or_else(|| CausalError::EventNotInPrefix(EventRef {
                    session_id: c.lineage.label.source_session.clone(),
                    index: c.lineage.label.source_index,
                }))
                .and_then(|r| build_neutralized_context(prefix, r, self.policy));
            match built {
                Ok(context) => {
                    probes.push(Probe {
                        context,
                        label_id: &c.lineage.label.id,
                    });
                    probed.push(c);
                }
                Err(e) => self.degraded.push(DegradedEntry {
                    sink_ref: sink_ref.clone(),
                    source_label: c.lineage.label.id.clone(),
                    stage: DegradedStage::Judge,
                    reason: e.to_string(),
                }),
            }
        }
        self.stats.probes += probes.len() as u64;
        let verdicts = probe_all(&probes, sink, self.judge, self.options.max_in_flight);
        let theta_impl = self.policy.thresholds.theta_str_impl;
        let mut out = Vec::new();
        for (c, verdict) in probed.into_iter().zip(verdicts) {
            match verdict {
                Ok(v) if !v.would_call_anyway => out.push(Finding {
                    sink_ref: sink_ref.clone(),
                    source_label: c.lineage.label.id.clone(),
                    flow_class: FlowClass::ImplicitControl,
                    confidence: v.confidence,
                    provenance_path: c.lineage.path.clone(),
                    evidence: Evidence::Judge {
                        verdict: v,
                        lexical_overlap: (c.outcome.lcs_ratio >= theta_impl).then_some(c.outcome.lcs_ratio),
                    },
                    degraded: c.outcome.degraded.is_some(),
                }),
                Ok(_) => {}
                Err(e) => self.degraded.push(DegradedEntry {
                    sink_ref: sink_ref.clone(),
                    source_label: c.lineage.label.id.clone(),
                    stage: DegradedStage::Judge,
                    reason: e.to_string(),
                }),
            }
        }
        out
    }
}
