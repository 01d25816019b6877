use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{EdgeSource, ProceduralKnowledgeGraph};

const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub multi_member_nodes: usize,
    pub edges: usize,
    pub database_edges: usize,
    pub corpus_edges: usize,
    pub both_source_edges: usize,
    /// Edge-score counts over ten equal bins of `[0, 1]`; 1.0 lands in the last.
    pub score_histogram: Vec<usize>,
}

impl GraphStats {
    pub fn compute(graph: &ProceduralKnowledgeGraph) -> Self {
        let mut hist = vec![0; HISTOGRAM_BINS];
        let (mut db, mut corpus, mut both) = (0, 0, 0);
        for e in graph.edges() {
            let bin = ((e.score * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            hist[bin] += 1;
            let has_db = e.sources.contains(&EdgeSource::Database);
            let has_corpus = e.sources.contains(&EdgeSource::Corpus);
            db += usize::from(has_db);
            corpus += usize::from(has_corpus);
            both += usize::from(has_db && has_corpus);
        }
        Self {
            nodes: graph.num_nodes(),
            multi_member_nodes: graph.nodes().iter().filter(|n| n.members.len() > 1).count(),
            edges: graph.edges().len(),
            database_edges: db,
            corpus_edges: corpus,
            both_source_edges: both,
            score_histogram: hist,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering of the subgraph within `radius` hops (either edge
/// direction) of `centers`. Corpus-only edges are dashed. An empty center
/// set renders the whole graph.
pub fn to_dot(graph: &ProceduralKnowledgeGraph, centers: &[usize], radius: usize) -> String {
    let keep: BTreeSet<usize> = if centers.is_empty() {
        (0..graph.num_nodes()).collect()
    } else {
        let mut keep: BTreeSet<usize> = centers
            .iter()
            .copied()
            .filter(|&c| c < graph.num_nodes())
            .collect();
        let mut frontier = keep.clone();
        for _ in 0..radius {
            let mut next = BTreeSet::new();
            for &n in &frontier {
                for e in graph.out_edges(n) {
                    next.insert(e.dst);
                }
                for e in graph.in_edges(n) {
                    next.insert(e.src);
                }
            }
            next.retain(|n| !keep.contains(n));
            keep.extend(next.iter().copied());
            frontier = next;
        }
        keep
    };

    let mut out = String::from("digraph pkg {\n  rankdir=LR;\n  node [shape=box];\n");
    for &n in &keep {
        let node = &graph.nodes()[n];
        let label = node
            .members
            .first()
            .map(|m| m.headline.as_str())
            .unwrap_or("");
        let extra = if node.members.len() > 1 {
            format!(" (+{})", node.members.len() - 1)
        } else {
            String::new()
        };
        let style = if centers.contains(&n) {
            ", style=filled, fillcolor=lightyellow"
        } else {
            ""
        };
        writeln!(
            out,
            "  n{n} [label=\"{n}: {}{extra}\"{style}];",
            escape(label)
        )
        .unwrap();
    }
    for e in graph.edges() {
        if keep.contains(&e.src) && keep.contains(&e.dst) {
            let style = if e.sources == [EdgeSource::Corpus] {
                ", style=dashed"
            } else {
                ""
            };
            writeln!(
                out,
                "  n{} -> n{} [label=\"{:.2}\"{style}];",
                e.src, e.dst, e.score
            )
            .unwrap();
        }
    }
    out.push_str("}\n");
    out
}
