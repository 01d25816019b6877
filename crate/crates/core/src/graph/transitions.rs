//! Step transitions from the step database and from the video corpus.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::StepDatabase;
use crate::dedup::NodeAssignment;
use crate::error::{Error, Result};

pub const DEFAULT_INSTANCE_THRESHOLD: f64 = 1000.0;
pub const DATABASE_EDGE_SCORE: f64 = 1.0;

/// Matched headlines `(headline, score)` for every segment of one video.
pub type VideoMatches = Vec<Vec<(usize, f64)>>;

/// Adjacent steps of every task, mapped to nodes. Same-node pairs are
/// dropped; the result is sorted and free of duplicates.
pub fn database_transitions(
    db: &StepDatabase,
    assignment: &NodeAssignment,
) -> Vec<(usize, usize, f64)> {
    let mut pairs = std::collections::BTreeSet::new();
    for t in 0..db.num_tasks() {
        let range = db.task_range(t);
        for h in range.start..range.end.saturating_sub(1) {
            let (a, b) = (assignment.node_of(h), assignment.node_of(h + 1));
            if a != b {
                pairs.insert((a, b));
            }
        }
    }
    pairs
        .into_iter()
        .map(|(a, b)| (a, b, DATABASE_EDGE_SCORE))
        .collect()
}

fn video_aggregates(video: &VideoMatches) -> BTreeMap<(usize, usize), f64> {
    let mut acc = BTreeMap::new();
    let by_index = |seg: &Vec<(usize, f64)>| {
        let mut s = seg.clone();
        s.sort_by_key(|&(h, _)| h);
        s
    };
    for w in video.windows(2) {
        let (prev, next) = (by_index(&w[0]), by_index(&w[1]));
        for &(src, s_src) in &prev {
            for &(dst, s_dst) in &next {
                if src != dst {
                    *acc.entry((src, dst)).or_insert(0.0) += s_src * s_dst;
                }
            }
        }
    }
    acc
}

/// Summed instance scores per headline pair, before pruning.
///
/// An instance is one (earlier headline, later headline) pair drawn from two
/// temporally adjacent segments; its score is the product of the two
/// matching scores. Per-video partial sums are merged in video order, so
/// the result does not depend on the thread count.
pub fn aggregate_transitions(videos: &[VideoMatches]) -> BTreeMap<(usize, usize), f64> {
    let partials: Vec<_> = videos.par_iter().map(video_aggregates).collect();
    let mut total = BTreeMap::new();
    for partial in partials {
        for (k, v) in partial {
            *total.entry(k).or_insert(0.0) += v;
        }
    }
    total
}

/// Aggregated corpus transitions with every pair whose total is not
/// strictly above `instance_threshold` removed.
pub fn corpus_transitions(
    videos: &[VideoMatches],
    instance_threshold: f64,
) -> BTreeMap<(usize, usize), f64> {
    let mut agg = aggregate_transitions(videos);
    agg.retain(|_, s| *s > instance_threshold);
    agg
}

/// Log min-max normalization into `[0, 1]`. A single distinct value maps
/// to 1.0.
pub fn normalize_scores<K: Ord + Clone>(scores: &BTreeMap<K, f64>) -> Result<BTreeMap<K, f64>> {
    if let Some(bad) = scores.values().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain(format!(
            "log normalization needs positive finite scores, got {bad}"
        )));
    }
    let logs: Vec<f64> = scores.values().map(|s| s.ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(scores
        .keys()
        .zip(logs)
        .map(|(k, l)| {
            let v = if hi > lo {
                ((l - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            (k.clone(), v)
        })
        .collect())
}
