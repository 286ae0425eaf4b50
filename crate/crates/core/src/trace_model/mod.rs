//! Trace and policy data model.

pub mod policy;
pub mod trace;

pub use policy::{
    classify, parse_policy, render_policy, EventKind, EventKinds, Policy, PolicyError,
    ThresholdProfile, DEFAULT_SINKS, DEFAULT_SOURCES, RETRIEVAL_PLACEHOLDER,
};
pub use trace::{parse_trace, serialize_trace, EventRef, SessionTrace, ToolEvent, Trace, TraceError};
