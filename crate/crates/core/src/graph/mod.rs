//! The procedural knowledge graph: deduplicated step nodes joined by
//! directed, scored step transitions.

mod build;
mod export;
mod khop;
mod transitions;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::StepDatabase;
use crate::dedup::NodeAssignment;
use crate::error::{Error, Result};

pub use build::{build_graph, match_corpus, GraphBuildConfig, GraphBuildReport};
pub use export::{to_dot, GraphStats};
pub use khop::{khop_neighbors, Direction};
pub use transitions::{
    aggregate_transitions, corpus_transitions, database_transitions, normalize_scores,
    VideoMatches, DATABASE_EDGE_SCORE, DEFAULT_INSTANCE_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSource {
    Corpus,
    Database,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRef {
    pub task_id: String,
    pub step_index: usize,
    pub headline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNode {
    pub node_id: usize,
    pub members: Vec<MemberRef>,
    /// Sorted, distinct names of the tasks the members come from.
    #[serde(default)]
    pub task_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub src: usize,
    pub dst: usize,
    pub score: f64,
    pub sources: Vec<EdgeSource>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    nodes: Vec<StepNode>,
    edges: Vec<DirectedEdge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralKnowledgeGraph {
    nodes: Vec<StepNode>,
    edges: Vec<DirectedEdge>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    config_hash: Option<String>,
}

impl ProceduralKnowledgeGraph {
    /// Validates nodes and edges and builds the adjacency indexes.
    pub fn from_parts(nodes: Vec<StepNode>, mut edges: Vec<DirectedEdge>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.node_id != i {
                return Err(Error::Invalid(format!(
                    "node ids must be dense and sorted: position {i} has id {}",
                    n.node_id
                )));
            }
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        let mut out_adj = vec![Vec::new(); nodes.len()];
        let mut in_adj = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter_mut().enumerate() {
            if e.src >= nodes.len() || e.dst >= nodes.len() {
                return Err(Error::Invalid(format!(
                    "edge {}->{} references a missing node",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::Invalid(format!("self-loop on node {}", e.src)));
            }
            if !(0.0..=1.0).contains(&e.score) {
                return Err(Error::Invalid(format!(
                    "edge {}->{} score {} outside [0, 1]",
                    e.src, e.dst, e.score
                )));
            }
            if e.sources.is_empty() {
                return Err(Error::Invalid(format!(
                    "edge {}->{} has no source",
                    e.src, e.dst
                )));
            }
            e.sources.sort();
            e.sources.dedup();
            out_adj[e.src].push(k);
            in_adj[e.dst].push(k);
        }
        if edges
            .windows(2)
            .any(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst))
        {
            return Err(Error::Invalid("duplicate edge".into()));
        }
        Ok(Self {
            nodes,
            edges,
            out_adj,
            in_adj,
            config_hash: None,
        })
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn nodes(&self) -> &[StepNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &DirectedEdge> {
        self.out_adj[node].iter().map(move |&k| &self.edges[k])
    }

    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = &DirectedEdge> {
        self.in_adj[node].iter().map(move |&k| &self.edges[k])
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<&DirectedEdge> {
        self.out_edges(src).find(|e| e.dst == dst)
    }

    /// Recovers the headline -> node map against the database the graph was
    /// built from.
    pub fn assignment(&self, db: &StepDatabase) -> Result<NodeAssignment> {
        let members = self
            .nodes
            .iter()
            .map(|n| {
                n.members
                    .iter()
                    .map(|m| {
                        let t = db.task_index(&m.task_id).ok_or_else(|| {
                            Error::Invalid(format!("graph references unknown task {:?}", m.task_id))
                        })?;
                        if m.step_index >= db.tasks()[t].steps.len() {
                            return Err(Error::Invalid(format!(
                                "graph references missing step {} of task {:?}",
                                m.step_index, m.task_id
                            )));
                        }
                        Ok(db.headline_index(t, m.step_index))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        NodeAssignment::from_members(members, db.num_headlines())
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            config_hash: self.config_hash.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        let mut s = serde_json::to_string(&file).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let mut g = Self::from_parts(file.nodes, file.edges)?;
        g.config_hash = file.config_hash;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Builds the graph from database transitions (node level) and normalized
/// corpus transitions (headline level).
///
/// Each ordered node pair keeps the maximum score over everything that maps
/// onto it; sources are unioned and node-level self-loops are dropped.
pub fn assemble_graph(
    db_edges: &[(usize, usize, f64)],
    corpus_edges: &BTreeMap<(usize, usize), f64>,
    assignment: &NodeAssignment,
    db: &StepDatabase,
) -> Result<ProceduralKnowledgeGraph> {
    let mut merged: BTreeMap<(usize, usize), (f64, BTreeSet<EdgeSource>)> = BTreeMap::new();
    let mut add = |src: usize, dst: usize, score: f64, source: EdgeSource| {
        if src == dst {
            return;
        }
        let entry = merged
            .entry((src, dst))
            .or_insert((f64::NEG_INFINITY, BTreeSet::new()));
        entry.0 = entry.0.max(score);
        entry.1.insert(source);
    };
    for &(src, dst, score) in db_edges {
        add(src, dst, score, EdgeSource::Database);
    }
    for (&(h_src, h_dst), &score) in corpus_edges {
        if h_src >= assignment.num_headlines() || h_dst >= assignment.num_headlines() {
            return Err(Error::Invalid(format!(
                "corpus transition {h_src}->{h_dst} references a missing headline"
            )));
        }
        add(
            assignment.node_of(h_src),
            assignment.node_of(h_dst),
            score,
            EdgeSource::Corpus,
        );
    }

    let nodes = (0..assignment.num_nodes())
        .map(|n| {
            let mut task_names = BTreeSet::new();
            let members = assignment
                .members(n)
                .iter()
                .map(|&h| {
                    let r = db.locate(h);
                    let task = &db.tasks()[r.task];
                    task_names.insert(task.task_name.clone());
                    MemberRef {
                        task_id: task.task_id.clone(),
                        step_index: r.step_index,
                        headline: task.steps[r.step_index].headline.clone(),
                    }
                })
                .collect();
            StepNode {
                node_id: n,
                members,
                task_names: task_names.into_iter().collect(),
            }
        })
        .collect();
    let edges = merged
        .into_iter()
        .map(|((src, dst), (score, sources))| DirectedEdge {
            src,
            dst,
            score,
            sources: sources.into_iter().collect(),
        })
        .collect();
    ProceduralKnowledgeGraph::from_parts(nodes, edges)
}
