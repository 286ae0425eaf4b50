//! Offline provenance auditing for LLM-agent tool-call traces.
//!
//! A trace is replayed into a provenance graph; at every sink call the
//! labels reaching it are checked by a four-tier content cascade, and when
//! no content evidence exists, by counterfactual judge probes.

pub mod audit;
pub mod causal_analyzer;
pub mod embedding;
pub mod explicit_tracker;
pub mod provenance_graph;
pub mod trace_model;

pub use audit::{
    audit_segments, audit_trace, AuditOptions, AuditReport, EvalSummary, Finding, FlowClass, Providers,
    ScenarioRecord,
};
pub use causal_analyzer::{HttpJudge, HttpJudgeConfig, Judge, JudgeVerdict, ScriptedJudge};
pub use embedding::{EmbeddingProvider, EmbeddingVector, HashingEmbedder, RemoteEmbedder, RemoteEmbeddingConfig};
pub use explicit_tracker::{CascadeOutcome, Tier, TierResult};
pub use provenance_graph::{DcpgGraph, StateSnapshot, TaintLabel};
pub use trace_model::{parse_policy, parse_trace, EventRef, Policy, ThresholdProfile, ToolEvent, Trace};
