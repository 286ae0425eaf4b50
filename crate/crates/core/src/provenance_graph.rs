//! Dynamic context provenance graph.
//!
//! Nodes are tool-call events; edges carry one taint label each. Within a
//! session every label that entered the context (at its source event or at a
//! memory read that rehydrated it) reaches every later event. Memory writes
//! record the labels of the written content under a record key, and reads of
//! the same key, possibly in a later session restored from a snapshot,
//! reconnect the chain with a rehydration edge.

use crate::explicit_tracker::canary::trailing_canary;
use crate::trace_model::{EventKind, EventKinds, ToolEvent};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

/// Current snapshot format version.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Argument name carrying serialized taint labels on enriched memory writes.
pub const TAINT_METADATA_KEY: &str = "_nt_taint";

/// Argument name producers use to identify a memory record.
pub const RECORD_KEY_ARG: &str = "record_key";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaintLabel {
    pub id: String,
    pub source_session: String,
    pub source_index: u64,
    pub origin_tool: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canary: Option<String>,
}

impl TaintLabel {
    pub fn origin_node(&self) -> String {
        node_id(&self.source_session, self.source_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcpgNode {
    pub node_id: String,
    pub session_id: String,
    pub event_index: u64,
    pub tool_name: String,
    pub kinds: EventKinds,
    pub args_digest: String,
    pub taint_set: BTreeSet<String>,
}

/// What an edge records: plain context lineage, a memory rehydration, or
/// the detection tier that confirmed propagation into a sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTier {
    Lineage,
    Rehydrate,
    Canary,
    Lcs,
    Semantic,
    Coverage,
    Implicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcpgEdge {
    pub from_node: String,
    pub to_node: String,
    pub label_id: String,
    pub tier: EdgeTier,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryAnnotation {
    pub writer: String,
    pub labels: BTreeSet<String>,
}

/// The persisted form of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub version: u32,
    pub nodes: Vec<DcpgNode>,
    pub edges: Vec<DcpgEdge>,
    pub taint_registry: BTreeMap<String, TaintLabel>,
    pub memory_annotations: BTreeMap<String, MemoryAnnotation>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("out-of-order event in session {session}: expected index {expected}, got {found}")]
    OutOfOrderEvent {
        session: String,
        expected: u64,
        found: u64,
    },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} is not a memory write")]
    NotAMemoryWrite(String),
    #[error("node {0} is not a memory read")]
    NotAMemoryRead(String),
    #[error("node {0} is not a sink")]
    NotASink(String),
    #[error("snapshot version mismatch: expected {SNAPSHOT_VERSION}, found {found}")]
    VersionMismatch { found: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

/// One label reaching a sink, with a shortest witness path from the
/// label's origin event to the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct Lineage {
    pub label: TaintLabel,
    pub path: Vec<String>,
    /// The path passes through a memory rehydration edge.
    pub crosses_memory: bool,
}

impl Lineage {
    pub fn crosses_session(&self, graph: &DcpgGraph) -> bool {
        let sessions: BTreeSet<&str> = self
            .path
            .iter()
            .filter_map(|id| graph.node(id))
            .map(|n| n.session_id.as_str())
            .collect();
        sessions.len() > 1
    }
}

pub fn node_id(session: &str, index: u64) -> String {
    format!("{session}#{index}")
}

pub fn label_id(session: &str, index: u64) -> String {
    format!("lbl:{session}:{index}")
}

fn sha256_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Content hash over an event's arguments and result.
pub fn args_digest(event: &ToolEvent) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(event.args.len() * 2 + 1);
    for (k, v) in &event.args {
        parts.push(k);
        parts.push(v);
    }
    parts.push(&event.result);
    sha256_hex(&parts)
}

/// Record key of a memory write: the explicit `record_key` argument, or a
/// content hash of the written value.
pub fn memory_key_for_write(event: &ToolEvent) -> String {
    if let Some(k) = event.args.get(RECORD_KEY_ARG) {
        return k.clone();
    }
    let value: Vec<&str> = event
        .args
        .iter()
        .filter(|(k, _)| k.as_str() != TAINT_METADATA_KEY)
        .map(|(_, v)| v.as_str())
        .collect();
    content_key(&value.join("\n"))
}

/// Record key of a memory read: the explicit `record_key` argument, or a
/// content hash of the returned value.
pub fn memory_key_for_read(event: &ToolEvent) -> String {
    event
        .args
        .get(RECORD_KEY_ARG)
        .cloned()
        .unwrap_or_else(|| content_key(&event.result))
}

fn content_key(value: &str) -> String {
    format!("sha256:{}", sha256_hex(&[value.trim()]))
}

#[derive(Debug, Clone, Default)]
pub struct DcpgGraph {
    nodes: Vec<DcpgNode>,
    edges: Vec<DcpgEdge>,
    registry: BTreeMap<String, TaintLabel>,
    annotations: BTreeMap<String, MemoryAnnotation>,
    // Derived state, rebuilt on load.
    by_id: HashMap<String, usize>,
    next_index: HashMap<String, u64>,
    // Per session: (node position, label id) where a label entered the context.
    entries: HashMap<String, BTreeSet<(usize, String)>>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl PartialEq for DcpgGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.edges == other.edges
            && self.registry == other.registry
            && self.annotations == other.annotations
    }
}

impl DcpgGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[DcpgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DcpgEdge] {
        &self.edges
    }

    pub fn registry(&self) -> &BTreeMap<String, TaintLabel> {
        &self.registry
    }

    pub fn memory_annotations(&self) -> &BTreeMap<String, MemoryAnnotation> {
        &self.annotations
    }

    pub fn node(&self, id: &str) -> Option<&DcpgNode> {
        self.by_id.get(id).map(|&i| &self.nodes[i])
    }

    pub fn label(&self, id: &str) -> Option<&TaintLabel> {
        self.registry.get(id)
    }

    fn position(&self, id: &str) -> Result<usize, GraphError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    fn push_edge(&mut self, from: usize, to: usize, label: &str, tier: EdgeTier) {
        let confidence = self.registry.get(label).map_or(1.0, |l| l.confidence);
        let e = self.edges.len();
        self.edges.push(DcpgEdge {
            from_node: self.nodes[from].node_id.clone(),
            to_node: self.nodes[to].node_id.clone(),
            label_id: label.to_string(),
            tier,
            confidence,
        });
        self.outgoing[from].push(e);
        self.incoming[to].push(e);
    }

    /// Adds the node for `event`, connecting it to every label already in
    /// its session's context, and mints a fresh label when it is a source.
    pub fn record_event(&mut self, event: &ToolEvent, kinds: EventKinds) -> Result<String, GraphError> {
        let expected = self.next_index.get(&event.session_id).copied().unwrap_or(0);
        if event.index != expected {
            return Err(GraphError::OutOfOrderEvent {
                session: event.session_id.clone(),
                expected,
                found: event.index,
            });
        }
        let id = node_id(&event.session_id, event.index);
        let pos = self.nodes.len();
        self.nodes.push(DcpgNode {
            node_id: id.clone(),
            session_id: event.session_id.clone(),
            event_index: event.index,
            tool_name: event.tool_name.clone(),
            kinds,
            args_digest: args_digest(event),
            taint_set: BTreeSet::new(),
        });
        self.outgoing.push(Vec::new());
        self.incoming.push(Vec::new());
        self.by_id.insert(id.clone(), pos);
        self.next_index.insert(event.session_id.clone(), expected + 1);

        let context = self.entries.get(&event.session_id).cloned().unwrap_or_default();
        for (from, label) in context {
            self.push_edge(from, pos, &label, EdgeTier::Lineage);
            self.nodes[pos].taint_set.insert(label);
        }

        if kinds.contains(EventKind::Source) {
            let label = TaintLabel {
                id: label_id(&event.session_id, event.index),
                source_session: event.session_id.clone(),
                source_index: event.index,
                origin_tool: event.tool_name.clone(),
                confidence: 1.0,
                canary: trailing_canary(&event.result).map(str::to_string),
            };
            self.nodes[pos].taint_set.insert(label.id.clone());
            self.entries
                .entry(event.session_id.clone())
                .or_default()
                .insert((pos, label.id.clone()));
            self.registry.insert(label.id.clone(), label);
        }
        Ok(id)
    }

    /// Stores the write node's labels under `record_key`, replacing any
    /// earlier annotation for that key.
    pub fn annotate_memory_write(&mut self, node: &str, record_key: &str) -> Result<BTreeSet<String>, GraphError> {
        let pos = self.position(node)?;
        let n = &self.nodes[pos];
        if !n.kinds.contains(EventKind::MemoryWrite) {
            return Err(GraphError::NotAMemoryWrite(node.to_string()));
        }
        let labels = n.taint_set.clone();
        self.annotations.insert(
            record_key.to_string(),
            MemoryAnnotation {
                writer: n.node_id.clone(),
                labels: labels.clone(),
            },
        );
        Ok(labels)
    }

    /// Restores the labels annotated under `record_key` onto the read node.
    /// Labels already in the node's context are not re-added.
    pub fn rehydrate_on_read(&mut self, node: &str, record_key: &str) -> Result<BTreeSet<String>, GraphError> {
        let pos = self.position(node)?;
        if !self.nodes[pos].kinds.contains(EventKind::MemoryRead) {
            return Err(GraphError::NotAMemoryRead(node.to_string()));
        }
        let Some(annotation) = self.annotations.get(record_key).cloned() else {
            return Ok(BTreeSet::new());
        };
        let writer = self.position(&annotation.writer)?;
        let mut restored = BTreeSet::new();
        if writer == pos {
            return Ok(restored);
        }
        let session = self.nodes[pos].session_id.clone();
        for label in annotation.labels {
            if self.nodes[pos].taint_set.contains(&label) {
                continue;
            }
            self.push_edge(writer, pos, &label, EdgeTier::Rehydrate);
            self.nodes[pos].taint_set.insert(label.clone());
            self.entries
                .entry(session.clone())
                .or_default()
                .insert((pos, label.clone()));
            restored.insert(label);
        }
        Ok(restored)
    }

    /// Every label whose lineage reaches the sink, excluding a label minted
    /// by the sink event itself. Ordered by origin event (earliest first).
    pub fn lineage_for_sink(&self, sink: &str) -> Result<Vec<Lineage>, GraphError> {
        let target = self.position(sink)?;
        if !self.nodes[target].kinds.contains(EventKind::Sink) {
            return Err(GraphError::NotASink(sink.to_string()));
        }
        let candidates: BTreeSet<&str> = self.incoming[target]
            .iter()
            .map(|&e| self.edges[e].label_id.as_str())
            .collect();
        let mut out = Vec::new();
        for label_id in candidates {
            let Some(label) = self.registry.get(label_id) else {
                continue;
            };
            let Some(&origin) = self.by_id.get(&label.origin_node()) else {
                continue;
            };
            if origin == target {
                continue;
            }
            if let Some((path, crosses_memory)) = self.shortest_path(origin, target, label_id) {
                out.push((origin, Lineage {
                    label: label.clone(),
                    path,
                    crosses_memory,
                }));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.label.id.cmp(&b.1.label.id)));
        Ok(out.into_iter().map(|(_, l)| l).collect())
    }

    /// BFS over edges carrying `label`. Among equal-length paths the one
    /// through earlier nodes wins.
    fn shortest_path(&self, from: usize, to: usize, label: &str) -> Option<(Vec<String>, bool)> {
        let mut prev: HashMap<usize, (usize, usize)> = HashMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                break;
            }
            let mut next: Vec<(usize, usize)> = self.outgoing[u]
                .iter()
                .filter(|&&e| self.edges[e].label_id == label)
                .map(|&e| (self.by_id[&self.edges[e].to_node], e))
                .collect();
            next.sort();
            for (v, e) in next {
                if seen.insert(v) {
                    prev.insert(v, (u, e));
                    queue.push_back(v);
                }
            }
        }
        if from != to && !prev.contains_key(&to) {
            return None;
        }
        let mut path = vec![to];
        let mut crosses_memory = false;
        let mut cur = to;
        while cur != from {
            let (p, e) = prev[&cur];
            crosses_memory |= self.edges[e].tier == EdgeTier::Rehydrate;
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some((
            path.into_iter().map(|i| self.nodes[i].node_id.clone()).collect(),
            crosses_memory,
        ))
    }

    /// Records the tier that confirmed `label` at `sink` on the final hop of
    /// its witness path.
    pub fn mark_detection(&mut self, sink: &str, path: &[String], label: &str, tier: EdgeTier, confidence: f64) {
        let [.., from, to] = path else { return };
        if to != sink {
            return;
        }
        if let Some(edge) = self
            .edges
            .iter_mut()
            .find(|e| &e.from_node == from && &e.to_node == to && e.label_id == label)
        {
            edge.tier = tier;
            edge.confidence = confidence;
        }
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            version: SNAPSHOT_VERSION,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            taint_registry: self.registry.clone(),
            memory_annotations: self.annotations.clone(),
        }
    }

    /// Serializes the whole graph as a versioned JSON document.
    pub fn save_state(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.snapshot()).expect("snapshot serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn load_state(bytes: &[u8]) -> Result<DcpgGraph, GraphError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| GraphError::CorruptSnapshot(e.to_string()))?;
        match value.get("version") {
            Some(v) if v.as_u64() == Some(SNAPSHOT_VERSION as u64) => {}
            Some(v) => return Err(GraphError::VersionMismatch { found: v.to_string() }),
            None => return Err(GraphError::VersionMismatch { found: "none".into() }),
        }
        let snap: StateSnapshot =
            serde_json::from_value(value).map_err(|e| GraphError::CorruptSnapshot(e.to_string()))?;
        DcpgGraph::from_snapshot(snap)
    }

    pub fn from_snapshot(snap: StateSnapshot) -> Result<DcpgGraph, GraphError> {
        let corrupt = |m: String| Err(GraphError::CorruptSnapshot(m));
        let mut g = DcpgGraph {
            registry: snap.taint_registry,
            annotations: snap.memory_annotations,
            ..Default::default()
        };
        for (id, label) in &g.registry {
            if &label.id != id {
                return corrupt(format!("registry key {id} holds label {}", label.id));
            }
            if !(0.0..=1.0).contains(&label.confidence) {
                return corrupt(format!("label {id} confidence out of range"));
            }
        }
        for node in snap.nodes {
            if node.node_id != node_id(&node.session_id, node.event_index) {
                return corrupt(format!("node id {} does not match its event", node.node_id));
            }
            let expected = g.next_index.get(&node.session_id).copied().unwrap_or(0);
            if node.event_index != expected {
                return corrupt(format!("node {} out of session order", node.node_id));
            }
            if let Some(l) = node.taint_set.iter().find(|l| !g.registry.contains_key(*l)) {
                return corrupt(format!("node {} references unknown label {l}", node.node_id));
            }
            g.next_index.insert(node.session_id.clone(), expected + 1);
            g.by_id.insert(node.node_id.clone(), g.nodes.len());
            g.nodes.push(node);
            g.outgoing.push(Vec::new());
            g.incoming.push(Vec::new());
        }
        for label in g.registry.values() {
            let Some(&pos) = g.by_id.get(&label.origin_node()) else {
                return corrupt(format!("label {} has no origin node", label.id));
            };
            g.entries
                .entry(label.source_session.clone())
                .or_default()
                .insert((pos, label.id.clone()));
        }
        for edge in snap.edges {
            let (Some(&from), Some(&to)) = (g.by_id.get(&edge.from_node), g.by_id.get(&edge.to_node)) else {
                return corrupt(format!("edge {} -> {} references an unknown node", edge.from_node, edge.to_node));
            };
            if !g.registry.contains_key(&edge.label_id) {
                return corrupt(format!("edge references unknown label {}", edge.label_id));
            }
            let (f, t) = (&g.nodes[from], &g.nodes[to]);
            if f.session_id == t.session_id && f.event_index >= t.event_index {
                return corrupt(format!("edge {} -> {} points backwards", edge.from_node, edge.to_node));
            }
            if edge.tier == EdgeTier::Rehydrate {
                g.entries
                    .entry(t.session_id.clone())
                    .or_default()
                    .insert((to, edge.label_id.clone()));
            }
            let e = g.edges.len();
            g.edges.push(edge);
            g.outgoing[from].push(e);
            g.incoming[to].push(e);
        }
        for (key, a) in &g.annotations {
            if !g.by_id.contains_key(&a.writer) {
                return corrupt(format!("annotation {key} references unknown writer {}", a.writer));
            }
            if let Some(l) = a.labels.iter().find(|l| !g.registry.contains_key(*l)) {
                return corrupt(format!("annotation {key} references unknown label {l}"));
            }
        }
        Ok(g)
    }
}

/// Copies `events`, adding the `_nt_taint` metadata argument (a JSON array
/// of label ids) to every memory write recorded in `graph`.
pub fn enrich_memory_writes(events: &[ToolEvent], graph: &DcpgGraph) -> Vec<ToolEvent> {
    events
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if let Some(node) = graph.node(&node_id(&e.session_id, e.index)) {
                if node.kinds.contains(EventKind::MemoryWrite) {
                    let labels: Vec<&String> = node.taint_set.iter().collect();
                    e.args.insert(
                        TAINT_METADATA_KEY.to_string(),
                        serde_json::to_string(&labels).expect("label ids serialize"),
                    );
                }
            }
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(ks: &[EventKind]) -> EventKinds {
        ks.iter().copied().collect()
    }

    fn ev(session: &str, index: u64, tool: &str, result: &str) -> ToolEvent {
        ToolEvent::new(session, index, tool, [("content", "x")], result)
    }

    const SRC: &[EventKind] = &[EventKind::Source];
    const SINK: &[EventKind] = &[EventKind::Sink];
    const WRITE: &[EventKind] = &[EventKind::MemoryWrite];
    const READ: &[EventKind] = &[EventKind::MemoryRead];

    fn session_a() -> DcpgGraph {
        let mut g = DcpgGraph::new();
        g.record_event(&ev("A", 0, "retrieve_document", "Internal Q4 forecast"), kinds(SRC))
            .unwrap();
        let w = g
            .record_event(&ev("A", 1, "store_in_memory", "stored"), kinds(WRITE))
            .unwrap();
        g.annotate_memory_write(&w, "note:q4").unwrap();
        g
    }

    #[test]
    fn first_source_event_has_one_label_and_no_edges() {
        let mut g = DcpgGraph::new();
        let id = g.record_event(&ev("A", 0, "web_search", "page"), kinds(SRC)).unwrap();
        let n = g.node(&id).unwrap();
        assert_eq!(n.taint_set, BTreeSet::from(["lbl:A:0".to_string()]));
        assert!(g.edges().is_empty());
        assert_eq!(g.label("lbl:A:0").unwrap().confidence, 1.0);
    }

    #[test]
    fn context_accumulates_prior_labels() {
        let mut g = DcpgGraph::new();
        g.record_event(&ev("A", 0, "web_search", "p0"), kinds(SRC)).unwrap();
        g.record_event(&ev("A", 1, "read_email", "p1"), kinds(SRC)).unwrap();
        let third = g.record_event(&ev("A", 2, "send_email", ""), kinds(SINK)).unwrap();
        // Brute force: every earlier event's own label is in the context.
        let expected: BTreeSet<String> = (0..2).map(|i| label_id("A", i)).collect();
        let incoming: BTreeSet<String> = g
            .edges()
            .iter()
            .filter(|e| e.to_node == third)
            .map(|e| e.label_id.clone())
            .collect();
        assert_eq!(incoming, expected);
        assert_eq!(g.node(&third).unwrap().taint_set, expected);
        // Event 1 also inherited L0.
        assert!(g.node("A#1").unwrap().taint_set.contains("lbl:A:0"));
    }

    #[test]
    fn out_of_order_events_are_rejected() {
        let mut g = DcpgGraph::new();
        assert_eq!(
            g.record_event(&ev("A", 1, "web_search", ""), kinds(SRC)),
            Err(GraphError::OutOfOrderEvent {
                session: "A".into(),
                expected: 0,
                found: 1
            })
        );
        g.record_event(&ev("A", 0, "web_search", ""), kinds(SRC)).unwrap();
        assert!(g.record_event(&ev("A", 0, "web_search", ""), kinds(SRC)).is_err());
    }

    #[test]
    fn source_canary_is_recorded_on_label() {
        let mut g = DcpgGraph::new();
        g.record_event(&ev("A", 0, "web_search", "body NT-7f3a-9c2e"), kinds(SRC))
            .unwrap();
        assert_eq!(g.label("lbl:A:0").unwrap().canary.as_deref(), Some("NT-7f3a-9c2e"));
    }

    #[test]
    fn tainted_memory_write_is_annotated() {
        let g = session_a();
        let w = g.node("A#1").unwrap();
        assert!(w.taint_set.contains("lbl:A:0"));
        assert_eq!(
            g.memory_annotations()["note:q4"].labels,
            BTreeSet::from(["lbl:A:0".to_string()])
        );
    }

    #[test]
    fn untainted_write_annotates_empty() {
        let mut g = DcpgGraph::new();
        let w = g.record_event(&ev("A", 0, "store_in_memory", "ok"), kinds(WRITE)).unwrap();
        assert!(g.annotate_memory_write(&w, "k").unwrap().is_empty());
        assert!(g.memory_annotations()["k"].labels.is_empty());
    }

    #[test]
    fn repeated_writes_replace_annotation() {
        // Reference: a plain map with last-writer-wins semantics.
        for order in [[0u64, 1], [1, 0]] {
            let mut g = DcpgGraph::new();
            let mut reference: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            g.record_event(&ev("A", 0, "web_search", ""), kinds(SRC)).unwrap();
            g.record_event(&ev("B", 0, "web_search", ""), kinds(SRC)).unwrap();
            let writers = [
                g.record_event(&ev("A", 1, "store_in_memory", ""), kinds(WRITE)).unwrap(),
                g.record_event(&ev("B", 1, "store_in_memory", ""), kinds(WRITE)).unwrap(),
            ];
            for i in order {
                let stored = g.annotate_memory_write(&writers[i as usize], "same").unwrap();
                reference.insert("same".into(), stored);
            }
            assert_eq!(g.memory_annotations()["same"].labels, reference["same"]);
            let last = if order[1] == 0 { "lbl:A:0" } else { "lbl:B:0" };
            assert_eq!(reference["same"], BTreeSet::from([last.to_string()]));
        }
    }

    #[test]
    fn wrong_kind_errors() {
        let mut g = DcpgGraph::new();
        let s = g.record_event(&ev("A", 0, "web_search", ""), kinds(SRC)).unwrap();
        assert_eq!(g.annotate_memory_write(&s, "k"), Err(GraphError::NotAMemoryWrite(s.clone())));
        assert_eq!(g.rehydrate_on_read(&s, "k"), Err(GraphError::NotAMemoryRead(s.clone())));
        assert_eq!(g.lineage_for_sink(&s), Err(GraphError::NotASink(s.clone())));
        assert_eq!(g.lineage_for_sink("nope#0"), Err(GraphError::UnknownNode("nope#0".into())));
    }

    #[test]
    fn rehydration_restores_source_label() {
        let mut g = session_a();
        let r = g.record_event(&ev("A", 2, "memory_recall", "forecast"), kinds(READ)).unwrap();
        // Same-session read: the label is already in context; nothing new.
        assert!(g.rehydrate_on_read(&r, "note:q4").unwrap().is_empty());
        assert!(g.node(&r).unwrap().taint_set.contains("lbl:A:0"));
        let unknown = g.record_event(&ev("A", 3, "memory_recall", ""), kinds(READ)).unwrap();
        assert!(g.rehydrate_on_read(&unknown, "never-written").unwrap().is_empty());
    }

    #[test]
    fn cross_session_rehydration_after_snapshot() {
        let bytes = session_a().save_state();
        let mut g = DcpgGraph::load_state(&bytes).unwrap();
        let r = g.record_event(&ev("B", 0, "memory_recall", "forecast"), kinds(READ)).unwrap();
        let restored = g.rehydrate_on_read(&r, "note:q4").unwrap();
        assert_eq!(restored, BTreeSet::from(["lbl:A:0".to_string()]));
        assert_eq!(g.label("lbl:A:0").unwrap().source_session, "A");
        let sink = g.record_event(&ev("B", 1, "write_report", ""), kinds(SINK)).unwrap();
        let lineage = g.lineage_for_sink(&sink).unwrap();
        assert_eq!(lineage.len(), 1);
        assert_eq!(lineage[0].label.id, "lbl:A:0");
        assert_eq!(lineage[0].path, ["A#0", "A#1", "B#0", "B#1"]);
        assert!(lineage[0].crosses_memory);
        assert!(lineage[0].crosses_session(&g));
    }

    #[test]
    fn sink_lineage_basics() {
        let mut g = DcpgGraph::new();
        g.record_event(&ev("A", 0, "calculator", ""), EventKinds::empty()).unwrap();
        let s = g.record_event(&ev("A", 1, "send_email", ""), kinds(SINK)).unwrap();
        assert!(g.lineage_for_sink(&s).unwrap().is_empty());

        let mut g = DcpgGraph::new();
        g.record_event(&ev("A", 0, "web_search", ""), kinds(SRC)).unwrap();
        let s = g.record_event(&ev("A", 1, "send_email", ""), kinds(SINK)).unwrap();
        let l = g.lineage_for_sink(&s).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].path, ["A#0", "A#1"]);
        assert!(!l[0].crosses_memory);
    }

    #[test]
    fn sink_that_is_also_source_excludes_own_label() {
        let mut g = DcpgGraph::new();
        let both = [EventKind::Source, EventKind::Sink];
        let s = g.record_event(&ev("A", 0, "http_post", ""), kinds(&both)).unwrap();
        assert!(g.lineage_for_sink(&s).unwrap().is_empty());
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let g = session_a();
        let bytes = g.save_state();
        let back = DcpgGraph::load_state(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.save_state(), bytes);

        let empty = DcpgGraph::new().save_state();
        let v: serde_json::Value = serde_json::from_slice(&empty).unwrap();
        assert_eq!(v["nodes"], serde_json::json!([]));
        assert_eq!(v["version"], 1);

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["version"] = serde_json::json!(2);
        assert!(matches!(
            DcpgGraph::load_state(v.to_string().as_bytes()),
            Err(GraphError::VersionMismatch { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["taint_registry"] = serde_json::json!({});
        assert!(matches!(
            DcpgGraph::load_state(v.to_string().as_bytes()),
            Err(GraphError::CorruptSnapshot(_))
        ));
        assert!(matches!(DcpgGraph::load_state(b"{"), Err(GraphError::CorruptSnapshot(_))));
    }

    #[test]
    fn memory_keys() {
        let with_key = ToolEvent::new("A", 0, "store_in_memory", [("record_key", "k1"), ("content", "v")], "");
        assert_eq!(memory_key_for_write(&with_key), "k1");
        let write = ToolEvent::new("A", 0, "store_in_memory", [("content", "the value")], "");
        let read = ToolEvent::new("B", 0, "memory_recall", [("query", "value?")], "the value");
        assert_eq!(memory_key_for_write(&write), memory_key_for_read(&read));
    }

    #[test]
    fn enrichment_adds_metadata_to_writes_only() {
        let g = session_a();
        let events = [ev("A", 0, "retrieve_document", "f"), ev("A", 1, "store_in_memory", "stored")];
        let out = enrich_memory_writes(&events, &g);
        assert!(!out[0].args.contains_key(TAINT_METADATA_KEY));
        assert_eq!(out[1].args[TAINT_METADATA_KEY], r#"["lbl:A:0"]"#);
    }
}
