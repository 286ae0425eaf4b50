//! Audit orchestration, scenario evaluation and the synthetic suite.

pub mod engine;
pub mod eval;
pub mod report;
pub mod suite;

pub use engine::{
    audit_segments, audit_trace, replay_graph, sink_views, AuditError, AuditOptions, AuditReport, AuditRun,
    AuditStats, DegradedEntry, DegradedStage, Evidence, Finding, FlowClass, Providers, SinkRef,
};
pub use eval::{
    audit_scenario, audit_scenarios, evaluate, format_metric, load_manifest, load_trace, majority, EvalConfig,
    EvalError, EvalReport, EvalSummary, RunTrace, ScenarioOutcome, ScenarioRecord,
};
pub use report::render_markdown;
pub use suite::{build_mini_suite, generate_mini_suite, suite_policy, MiniSuite, FAMILIES};
