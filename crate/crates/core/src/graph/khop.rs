use std::collections::BTreeMap;

use super::ProceduralKnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    In,
    Out,
}

/// Confidence of every node reachable from (`Out`) or reaching (`In`) the
/// seed set by a directed path of exactly `k` edges, for `k = 1..=hops`.
///
/// Hop 1 is the best edge score between a seed and the node; hop `k` is the
/// best `edge score * hop-(k-1) confidence` over the connecting edges. This
/// equals the maximum edge-score product over all length-`k` paths. Paths
/// may revisit nodes, so a node can show up at several depths and a seed
/// can be its own neighbour through a cycle.
pub fn khop_neighbors(
    graph: &ProceduralKnowledgeGraph,
    seeds: &[usize],
    hops: usize,
    direction: Direction,
) -> Vec<BTreeMap<usize, f64>> {
    let mut frontier: BTreeMap<usize, f64> = seeds.iter().map(|&s| (s, 1.0)).collect();
    let mut out = Vec::with_capacity(hops);
    for _ in 0..hops {
        let mut next: BTreeMap<usize, f64> = BTreeMap::new();
        for (&node, &conf) in &frontier {
            let mut relax = |other: usize, score: f64| {
                let c = score * conf;
                next.entry(other).and_modify(|v| *v = v.max(c)).or_insert(c);
            };
            match direction {
                Direction::Out => graph.out_edges(node).for_each(|e| relax(e.dst, e.score)),
                Direction::In => graph.in_edges(node).for_each(|e| relax(e.src, e.score)),
            }
        }
        out.push(next.clone());
        frontier = next;
    }
    out
}
