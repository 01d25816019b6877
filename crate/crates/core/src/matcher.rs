//! Segment-to-headline and segment-to-node matching.
//!
//! Every ranking in the crate uses the same rule: descending score, ties by
//! ascending id. [`top_k`] implements it once.

use std::cmp::Ordering;

use crate::corpus::StepDatabase;
use crate::dedup::{dot, NodeAssignment};
use crate::error::{Error, Result};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 10.0;
pub const DEFAULT_TOP_K: usize = 3;

/// Total order used by all rankings: higher score first, then lower id.
pub fn rank_cmp(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best `(id, score)` pairs under [`rank_cmp`].
pub fn top_k(items: impl IntoIterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return best;
    }
    for item in items {
        if best.len() == k && rank_cmp(&item, &best[k - 1]) != Ordering::Less {
            continue;
        }
        let pos = best.partition_point(|b| rank_cmp(b, &item) == Ordering::Less);
        best.insert(pos, item);
        best.truncate(k);
    }
    best
}

/// Headline embeddings laid out for repeated dot products, plus the node
/// membership used to aggregate them.
#[derive(Debug, Clone)]
pub struct Matcher {
    dim: usize,
    embeddings: Vec<f64>,
    num_headlines: usize,
}

impl Matcher {
    pub fn new(db: &StepDatabase) -> Self {
        let embeddings = db
            .tasks()
            .iter()
            .flat_map(|t| t.steps.iter())
            .flat_map(|s| s.embedding.iter().map(|&x| f64::from(x)))
            .collect();
        Self {
            dim: db.dim(),
            embeddings,
            num_headlines: db.num_headlines(),
        }
    }

    pub fn num_headlines(&self) -> usize {
        self.num_headlines
    }

    /// Dot product of `segment` with every headline embedding.
    pub fn headline_scores(&self, segment: &[f64]) -> Result<Vec<f64>> {
        if segment.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: segment.len(),
            });
        }
        Ok(self
            .embeddings
            .chunks_exact(self.dim.max(1))
            .map(|e| dot(segment, e))
            .collect())
    }
}

/// Convenience wrapper over [`Matcher::headline_scores`].
pub fn headline_scores(segment: &[f64], db: &StepDatabase) -> Result<Vec<f64>> {
    Matcher::new(db).headline_scores(segment)
}

/// Headlines scoring strictly above `threshold`, best first.
pub fn matched_headlines(scores: &[f64], threshold: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, &s)| (i, s))
        .collect();
    out.sort_by(rank_cmp);
    out
}

/// Node score = max over the node's member headlines.
pub fn node_scores(headline_scores: &[f64], assignment: &NodeAssignment) -> Vec<f64> {
    assignment
        .all_members()
        .iter()
        .map(|members| {
            members
                .iter()
                .map(|&h| headline_scores[h])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Top-`k` nodes by score. With `floor` set, returns nothing when the best
/// score is below it (background segment).
pub fn top_k_nodes(node_scores: &[f64], k: usize, floor: Option<f64>) -> Vec<(usize, f64)> {
    let ranked = top_k(node_scores.iter().copied().enumerate(), k);
    match (floor, ranked.first()) {
        (Some(f), Some(&(_, best))) if best < f => Vec::new(),
        _ => ranked,
    }
}

/// Top-`k` raw headlines, no node aggregation.
pub fn vsm_top_headlines(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    top_k(scores.iter().copied().enumerate(), k)
}

/// Full per-segment matching result.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatches {
    pub video_id: String,
    pub segment_index: usize,
    pub headline_scores: Vec<f64>,
    pub matched_headlines: Vec<(usize, f64)>,
    pub node_scores: Vec<f64>,
}

impl SegmentMatches {
    pub fn compute(
        matcher: &Matcher,
        assignment: &NodeAssignment,
        video_id: &str,
        segment_index: usize,
        segment: &[f64],
        match_threshold: f64,
    ) -> Result<Self> {
        let headline_scores = matcher.headline_scores(segment)?;
        let matched = matched_headlines(&headline_scores, match_threshold);
        let nodes = node_scores(&headline_scores, assignment);
        Ok(Self {
            video_id: video_id.to_string(),
            segment_index,
            headline_scores,
            matched_headlines: matched,
            node_scores: nodes,
        })
    }
}
