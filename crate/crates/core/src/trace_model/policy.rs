//! Declarative source/sink/memory policy and event classification.

use super::trace::ToolEvent;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Source tools shipped in the default catalogue, grouped by family.
pub const DEFAULT_SOURCES: &[&str] = &[
    // web search
    "tavily_search",
    "web_search",
    "web_search_tool",
    "SerperDevTool",
    // http / document retrieval
    "scrape_url",
    "document_search",
    "retrieve_document",
    "retrieve_documents",
    // memory / RAG
    "store_document",
    "store_in_memory",
    "memory_recall",
    // trusted / internal
    "internal_kb_search",
    "internal_file_read",
    "internal_kb",
    // framework specific
    "search_docs",
    "knowledge_search",
    "search_tool",
    "research_search",
    // browser
    "web_browse",
    "browser_open",
    "browser_extract",
];

/// Sink tools shipped in the default catalogue.
pub const DEFAULT_SINKS: &[&str] = &[
    // code execution
    "execute_code",
    "execute_python",
    "execute_setup",
    "python_repl_tool",
    "PythonInterpreter",
    // http / external
    "http_exfil",
    "data_archive_api",
    "webhook_post",
    "cloud_storage_upload",
    // email
    "send_email",
    // file write
    "write_report",
    "FileWriterTool",
    // workflow / business
    "calendar_create_event",
    "crm_update_lead",
    "git_push_changes",
    "ticket_create",
    "slack_post_message",
    "notebook_publish",
];

/// Placeholder substituted for retrieval-like results during neutralization.
pub const RETRIEVAL_PLACEHOLDER: &str = "No relevant information found.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Source,
    Sink,
    MemoryWrite,
    MemoryRead,
    Other,
}

impl EventKind {
    const ROLES: [EventKind; 4] = [
        EventKind::Source,
        EventKind::Sink,
        EventKind::MemoryWrite,
        EventKind::MemoryRead,
    ];

    fn bit(self) -> u8 {
        match self {
            EventKind::Source => 1,
            EventKind::Sink => 2,
            EventKind::MemoryWrite => 4,
            EventKind::MemoryRead => 8,
            EventKind::Other => 0,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Source => "source",
            EventKind::Sink => "sink",
            EventKind::MemoryWrite => "memory_write",
            EventKind::MemoryRead => "memory_read",
            EventKind::Other => "other",
        };
        f.write_str(s)
    }
}

/// The set of roles one event plays under a policy. Empty means `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EventKinds(u8);

impl EventKinds {
    pub fn empty() -> Self {
        EventKinds(0)
    }

    pub fn with(mut self, kind: EventKind) -> Self {
        self.0 |= kind.bit();
        self
    }

    pub fn contains(&self, kind: EventKind) -> bool {
        match kind {
            EventKind::Other => self.0 == 0,
            k => self.0 & k.bit() != 0,
        }
    }

    pub fn is_other(&self) -> bool {
        self.0 == 0
    }

    /// The kinds in canonical order; `[Other]` when no role applies.
    pub fn to_vec(&self) -> Vec<EventKind> {
        if self.0 == 0 {
            return vec![EventKind::Other];
        }
        EventKind::ROLES
            .into_iter()
            .filter(|k| self.contains(*k))
            .collect()
    }

    /// The single most significant kind, for display.
    pub fn primary(&self) -> EventKind {
        self.to_vec()[0]
    }
}

impl FromIterator<EventKind> for EventKinds {
    fn from_iter<I: IntoIterator<Item = EventKind>>(iter: I) -> Self {
        iter.into_iter().fold(EventKinds::empty(), EventKinds::with)
    }
}

impl Serialize for EventKinds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_vec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EventKinds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<EventKind>::deserialize(d)?.into_iter().collect())
    }
}

/// Detection thresholds for the explicit tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub theta_str: f64,
    pub theta_str_impl: f64,
    pub theta_sem: f64,
    pub theta_sem_rag: f64,
    pub theta_cov: f64,
    pub theta_safe: f64,
}

impl Default for ThresholdProfile {
    fn default() -> Self {
        ThresholdProfile {
            theta_str: 0.15,
            theta_str_impl: 0.40,
            theta_sem: 0.60,
            theta_sem_rag: 0.85,
            theta_cov: 0.10,
            theta_safe: 0.95,
        }
    }
}

impl ThresholdProfile {
    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("string_match", self.theta_str),
            ("implicit_string", self.theta_str_impl),
            ("semantic", self.theta_sem),
            ("rag_semantic", self.theta_sem_rag),
            ("coverage", self.theta_cov),
            ("safe_semantic", self.theta_safe),
        ]
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, value) in self.named() {
            if !(0.0..=1.0).contains(&value) {
                return Err(PolicyError::InvalidThreshold {
                    name: name.to_string(),
                    value,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub sources: BTreeSet<String>,
    pub sinks: BTreeSet<String>,
    pub memory_writes: BTreeSet<String>,
    pub memory_reads: BTreeSet<String>,
    pub trusted_sources: BTreeSet<String>,
    pub thresholds: ThresholdProfile,
    pub chunk_sentences: usize,
    /// Per-tool neutralization placeholder overrides.
    pub placeholders: BTreeMap<String, String>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            sources: DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect(),
            sinks: DEFAULT_SINKS.iter().map(|s| s.to_string()).collect(),
            memory_writes: BTreeSet::new(),
            memory_reads: BTreeSet::new(),
            trusted_sources: BTreeSet::new(),
            thresholds: ThresholdProfile::default(),
            chunk_sentences: 3,
            placeholders: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("threshold {name} = {value} is outside [0, 1]")]
    InvalidThreshold { name: String, value: f64 },
    #[error("chunk_sentences must be a positive integer")]
    InvalidChunkSentences,
    #[error("policy parse error")]
    Parse(#[from] serde_yaml::Error),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    sources: Option<Vec<String>>,
    sinks: Option<Vec<String>>,
    memory_writes: Option<Vec<String>>,
    memory_reads: Option<Vec<String>>,
    trusted_sources: Option<Vec<String>>,
    thresholds: Option<ThresholdDoc>,
    chunk_sentences: Option<i64>,
    placeholders: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdDoc {
    string_match: Option<f64>,
    implicit_string: Option<f64>,
    semantic: Option<f64>,
    rag_semantic: Option<f64>,
    coverage: Option<f64>,
    safe_semantic: Option<f64>,
}

/// Parses a YAML policy document. Omitted keys take their defaults.
pub fn parse_policy(input: &str) -> Result<Policy, PolicyError> {
    let doc: PolicyDoc = serde_yaml::from_str::<Option<PolicyDoc>>(input)?.unwrap_or_default();
    let mut policy = Policy::default();
    let set = |v: Vec<String>| v.into_iter().collect::<BTreeSet<_>>();
    if let Some(v) = doc.sources {
        policy.sources = set(v);
    }
    if let Some(v) = doc.sinks {
        policy.sinks = set(v);
    }
    if let Some(v) = doc.memory_writes {
        policy.memory_writes = set(v);
    }
    if let Some(v) = doc.memory_reads {
        policy.memory_reads = set(v);
    }
    if let Some(v) = doc.trusted_sources {
        policy.trusted_sources = set(v);
    }
    if let Some(t) = doc.thresholds {
        let p = &mut policy.thresholds;
        p.theta_str = t.string_match.unwrap_or(p.theta_str);
        p.theta_str_impl = t.implicit_string.unwrap_or(p.theta_str_impl);
        p.theta_sem = t.semantic.unwrap_or(p.theta_sem);
        p.theta_sem_rag = t.rag_semantic.unwrap_or(p.theta_sem_rag);
        p.theta_cov = t.coverage.unwrap_or(p.theta_cov);
        p.theta_safe = t.safe_semantic.unwrap_or(p.theta_safe);
    }
    policy.thresholds.validate()?;
    if let Some(k) = doc.chunk_sentences {
        policy.chunk_sentences = usize::try_from(k)
            .ok()
            .filter(|k| *k > 0)
            .ok_or(PolicyError::InvalidChunkSentences)?;
    }
    if let Some(p) = doc.placeholders {
        policy.placeholders = p;
    }
    Ok(policy)
}

/// Renders a policy back to the YAML file format.
pub fn render_policy(policy: &Policy) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        sources: &'a BTreeSet<String>,
        sinks: &'a BTreeSet<String>,
        memory_writes: &'a BTreeSet<String>,
        memory_reads: &'a BTreeSet<String>,
        trusted_sources: &'a BTreeSet<String>,
        thresholds: BTreeMap<&'static str, f64>,
        chunk_sentences: usize,
        #[serde(skip_serializing_if = "BTreeMap::is_empty")]
        placeholders: &'a BTreeMap<String, String>,
    }
    let out = Out {
        sources: &policy.sources,
        sinks: &policy.sinks,
        memory_writes: &policy.memory_writes,
        memory_reads: &policy.memory_reads,
        trusted_sources: &policy.trusted_sources,
        thresholds: policy.thresholds.named().into_iter().collect(),
        chunk_sentences: policy.chunk_sentences,
        placeholders: &policy.placeholders,
    };
    serde_yaml::to_string(&out).expect("policy renders as YAML")
}

impl Policy {
    /// Roles of a tool under this policy. Trusted sources are sources.
    pub fn kinds_of(&self, tool: &str) -> EventKinds {
        let mut kinds = EventKinds::empty();
        if self.sources.contains(tool) || self.trusted_sources.contains(tool) {
            kinds = kinds.with(EventKind::Source);
        }
        if self.sinks.contains(tool) {
            kinds = kinds.with(EventKind::Sink);
        }
        if self.memory_writes.contains(tool) {
            kinds = kinds.with(EventKind::MemoryWrite);
        }
        if self.memory_reads.contains(tool) {
            kinds = kinds.with(EventKind::MemoryRead);
        }
        kinds
    }

    pub fn is_trusted(&self, tool: &str) -> bool {
        self.trusted_sources.contains(tool)
    }

    /// Neutral replacement text for a tool's result.
    pub fn placeholder_for(&self, tool: &str) -> &str {
        if let Some(p) = self.placeholders.get(tool) {
            return p;
        }
        let kinds = self.kinds_of(tool);
        if kinds.contains(EventKind::Source) || kinds.contains(EventKind::MemoryRead) {
            RETRIEVAL_PLACEHOLDER
        } else {
            ""
        }
    }
}

/// Classifies an event against the policy.
pub fn classify(event: &ToolEvent, policy: &Policy) -> EventKinds {
    policy.kinds_of(&event.tool_name)
}
