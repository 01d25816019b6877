use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transitions::{
    aggregate_transitions, database_transitions, normalize_scores, VideoMatches,
    DEFAULT_INSTANCE_THRESHOLD,
};
use super::{assemble_graph, ProceduralKnowledgeGraph};
use crate::corpus::{SegmentCorpus, StepDatabase};
use crate::dedup::{cluster_headlines, DEFAULT_DEDUP_THRESHOLD};
use crate::error::Result;
use crate::matcher::{matched_headlines, Matcher, DEFAULT_MATCH_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuildConfig {
    pub dedup_threshold: f64,
    pub match_threshold: f64,
    pub instance_threshold: f64,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            instance_threshold: DEFAULT_INSTANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBuildReport {
    pub headlines: usize,
    pub nodes: usize,
    pub multi_member_nodes: usize,
    pub segments: usize,
    pub matched_segments: usize,
    pub database_transitions: usize,
    pub corpus_candidates: usize,
    pub corpus_transitions: usize,
    pub edges: usize,
}

/// Thresholded headline matches for every segment of every video.
pub fn match_corpus(
    corpus: &SegmentCorpus,
    matcher: &Matcher,
    match_threshold: f64,
) -> Result<Vec<VideoMatches>> {
    corpus
        .videos
        .par_iter()
        .map(|v| {
            (0..v.num_segments())
                .map(|i| {
                    let scores = matcher.headline_scores(&v.features.row_f64(i))?;
                    Ok(matched_headlines(&scores, match_threshold))
                })
                .collect()
        })
        .collect()
}

/// Dedup, match, aggregate, prune, normalize and assemble.
pub fn build_graph(
    db: &StepDatabase,
    corpus: &SegmentCorpus,
    config: &GraphBuildConfig,
) -> Result<(ProceduralKnowledgeGraph, GraphBuildReport)> {
    let assignment = cluster_headlines(&db.embeddings_f64(), config.dedup_threshold)?;
    let db_edges = database_transitions(db, &assignment);

    let matcher = Matcher::new(db);
    let matches = match_corpus(corpus, &matcher, config.match_threshold)?;
    let mut aggregates = aggregate_transitions(&matches);
    let corpus_candidates = aggregates.len();
    aggregates.retain(|_, s| *s > config.instance_threshold);
    let normalized = normalize_scores(&aggregates)?;

    let graph = assemble_graph(&db_edges, &normalized, &assignment, db)?;
    let report = GraphBuildReport {
        headlines: db.num_headlines(),
        nodes: assignment.num_nodes(),
        multi_member_nodes: assignment
            .all_members()
            .iter()
            .filter(|m| m.len() > 1)
            .count(),
        segments: corpus.total_segments(),
        matched_segments: matches.iter().flatten().filter(|m| !m.is_empty()).count(),
        database_transitions: db_edges.len(),
        corpus_candidates,
        corpus_transitions: normalized.len(),
        edges: graph.edges().len(),
    };
    Ok((graph, report))
}
