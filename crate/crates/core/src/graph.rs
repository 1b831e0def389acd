//! The factor DAG: nodes with lineage, the active pool, quality-based
//! eviction, and JSON persistence.
//!
//! Every node has at most one parent, so lineage traces are unique chains.
//! Eviction only flips `active` to false; evicted nodes keep their edges so
//! the topology of past evolution stays complete, and they remain visible to
//! `trace` and to the duplicate screen.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, Expr};

pub type NodeId = u64;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("unknown parent id {0}")]
    UnknownParent(NodeId),
    #[error("duplicate expression among active nodes: {0}")]
    DuplicateExpression(String),
    #[error("schema version {found} is not supported (expected {GRAPH_SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("malformed graph document: {0}")]
    Malformed(String),
    #[error("graph json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("graph io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One factor in the DAG.
#[derive(Debug, Clone)]
pub struct FactorNode {
    pub id: NodeId,
    pub expr: Expr,
    /// Canonical rendering of `expr`; unique among active nodes.
    pub expr_text: String,
    pub explanation: String,
    pub quality: f64,
    pub depth: u32,
    /// Retrieval count k(F); only ever increases.
    pub retrievals: u32,
    pub parent_id: Option<NodeId>,
    pub active: bool,
    pub created_iteration: u32,
}

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    nodes: BTreeMap<NodeId, FactorNode>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    /// Canonical expression -> node id, active nodes only.
    active_exprs: HashMap<String, NodeId>,
    next_id: NodeId,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&FactorNode, GraphError> {
        self.nodes.get(&id).ok_or(GraphError::UnknownNode(id))
    }

    /// All nodes in id (insertion) order.
    pub fn nodes(&self) -> impl Iterator<Item = &FactorNode> {
        self.nodes.values()
    }

    /// Active pool in id order.
    pub fn active_nodes(&self) -> impl Iterator<Item = &FactorNode> {
        self.nodes.values().filter(|n| n.active)
    }

    pub fn active_count(&self) -> usize {
        self.nodes.values().filter(|n| n.active).count()
    }

    /// Ever-admitted children of a node (evicted children included).
    pub fn children_of(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map_or(&[], Vec::as_slice)
    }

    /// True when the canonical expression already exists anywhere in the
    /// graph, active or evicted.
    pub fn contains_expression(&self, canonical: &str) -> bool {
        self.nodes.values().any(|n| n.expr_text == canonical)
    }

    pub fn insert_node(
        &mut self,
        expr: Expr,
        explanation: String,
        parent_id: Option<NodeId>,
        quality: f64,
        created_iteration: u32,
    ) -> Result<NodeId, GraphError> {
        let depth = match parent_id {
            None => 0,
            Some(pid) => {
                let parent = self
                    .nodes
                    .get(&pid)
                    .ok_or(GraphError::UnknownParent(pid))?;
                parent.depth + 1
            }
        };
        let expr_text = expr.render();
        if self.active_exprs.contains_key(&expr_text) {
            return Err(GraphError::DuplicateExpression(expr_text));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(
            id,
            FactorNode {
                id,
                expr,
                expr_text: expr_text.clone(),
                explanation,
                quality,
                depth,
                retrievals: 0,
                parent_id,
                active: true,
                created_iteration,
            },
        );
        if let Some(pid) = parent_id {
            self.children.entry(pid).or_default().push(id);
        }
        self.active_exprs.insert(expr_text, id);
        Ok(id)
    }

    /// Unique parent chain from a root to `id`, inclusive, oldest first.
    pub fn trace(&self, id: NodeId) -> Result<Vec<&FactorNode>, GraphError> {
        let mut chain = Vec::new();
        let mut cursor = Some(id);
        while let Some(cur) = cursor {
            let node = self.node(cur)?;
            chain.push(node);
            cursor = node.parent_id;
            // parents always pre-exist, so depth bounds the walk
            if chain.len() > self.nodes.len() {
                return Err(GraphError::Malformed(format!(
                    "lineage cycle detected at node {id}"
                )));
            }
        }
        chain.reverse();
        Ok(chain)
    }

    pub fn increment_retrievals(&mut self, id: NodeId) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(&id).ok_or(GraphError::UnknownNode(id))?;
        node.retrievals += 1;
        Ok(())
    }

    /// Evict the lowest-quality active node if the pool exceeds `capacity`.
    /// Ties break toward the oldest `created_iteration`, then the smallest
    /// id. Returns `None` when the pool is not over capacity.
    pub fn evict_lowest(&mut self, capacity: usize) -> Option<NodeId> {
        if self.active_count() <= capacity {
            return None;
        }
        let victim = self
            .nodes
            .values()
            .filter(|n| n.active)
            .min_by(|a, b| {
                a.quality
                    .total_cmp(&b.quality)
                    .then(a.created_iteration.cmp(&b.created_iteration))
                    .then(a.id.cmp(&b.id))
            })
            .map(|n| n.id)?;
        let node = self.nodes.get_mut(&victim).expect("victim exists");
        node.active = false;
        self.active_exprs.remove(&node.expr_text);
        Some(victim)
    }

    pub fn to_document(&self) -> GraphDoc {
        GraphDoc {
            schema_version: GRAPH_SCHEMA_VERSION,
            nodes: self
                .nodes
                .values()
                .map(|n| NodeRecord {
                    id: n.id,
                    expr: n.expr_text.clone(),
                    explanation: n.explanation.clone(),
                    quality: n.quality,
                    depth: n.depth,
                    k: n.retrievals,
                    parent_id: n.parent_id,
                    active: n.active,
                    created_iteration: n.created_iteration,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: GraphDoc) -> Result<Self, GraphError> {
        if doc.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::SchemaVersion {
                found: doc.schema_version,
            });
        }
        let mut graph = FactorGraph::new();
        for rec in doc.nodes {
            let expr = parse(&rec.expr).map_err(|e| {
                GraphError::Malformed(format!("node {}: unparseable expression: {e}", rec.id))
            })?;
            if graph.nodes.contains_key(&rec.id) {
                return Err(GraphError::Malformed(format!("duplicate node id {}", rec.id)));
            }
            let depth = match rec.parent_id {
                None => 0,
                Some(pid) => {
                    let parent = graph
                        .nodes
                        .get(&pid)
                        .ok_or_else(|| {
                            GraphError::Malformed(format!(
                                "node {} references parent {} which does not precede it",
                                rec.id, pid
                            ))
                        })?;
                    parent.depth + 1
                }
            };
            if depth != rec.depth {
                return Err(GraphError::Malformed(format!(
                    "node {}: stored depth {} does not match lineage depth {depth}",
                    rec.id, rec.depth
                )));
            }
            let expr_text = expr.render();
            if rec.active {
                if let Some(dup) = graph.active_exprs.get(&expr_text) {
                    return Err(GraphError::Malformed(format!(
                        "active nodes {dup} and {} share expression {expr_text}",
                        rec.id
                    )));
                }
                graph.active_exprs.insert(expr_text.clone(), rec.id);
            }
            if let Some(pid) = rec.parent_id {
                graph.children.entry(pid).or_default().push(rec.id);
            }
            graph.nodes.insert(
                rec.id,
                FactorNode {
                    id: rec.id,
                    expr,
                    expr_text,
                    explanation: rec.explanation,
                    quality: rec.quality,
                    depth: rec.depth,
                    retrievals: rec.k,
                    parent_id: rec.parent_id,
                    active: rec.active,
                    created_iteration: rec.created_iteration,
                },
            );
            graph.next_id = graph.next_id.max(rec.id + 1);
        }
        Ok(graph)
    }

    pub fn save(&self, mut sink: impl Write) -> Result<(), GraphError> {
        let doc = self.to_document();
        serde_json::to_writer_pretty(&mut sink, &doc)?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(source: impl Read) -> Result<Self, GraphError> {
        let doc: GraphDoc = serde_json::from_reader(source)?;
        Self::from_document(doc)
    }

    /// Graphviz rendering of the lineage; evicted nodes are drawn dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph factors {\n  rankdir=TB;\n");
        for n in self.nodes.values() {
            let label = format!(
                "#{} q={:.4}\\n{}",
                n.id,
                n.quality,
                n.expr_text.replace('"', "\\\"")
            );
            let style = if n.active { "solid" } else { "dashed" };
            out.push_str(&format!(
                "  n{} [label=\"{}\", style={}];\n",
                n.id, label, style
            ));
        }
        for n in self.nodes.values() {
            if let Some(pid) = n.parent_id {
                out.push_str(&format!("  n{} -> n{};\n", pid, n.id));
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Persisted form: `{schema_version: 1, nodes: [...]}` with expressions in
/// canonical rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDoc {
    pub schema_version: u32,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub expr: String,
    pub explanation: String,
    pub quality: f64,
    pub depth: u32,
    pub k: u32,
    pub parent_id: Option<NodeId>,
    pub active: bool,
    pub created_iteration: u32,
}
