//! Step deduplication: single-linkage agglomerative clustering of headline
//! embeddings under cosine distance.
//!
//! Single linkage stops merging once the smallest inter-cluster distance
//! reaches the threshold, so the final partition is the set of connected
//! components of the graph whose edges are the pairs at distance strictly
//! below the threshold. We build it Kruskal-style: collect every sub-threshold
//! pair, sort by `(distance, i, j)` and union.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.09;

/// `1 - u.v / (|u| |v|)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Headline -> node partition with canonical numbering: node ids follow the
/// order of each cluster's smallest member headline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeAssignment {
    node_of: Vec<usize>,
    members_of: Vec<Vec<usize>>,
}

impl NodeAssignment {
    /// Builds an assignment from arbitrary cluster labels, renumbering nodes
    /// canonically.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut node_of = Vec::with_capacity(labels.len());
        let mut members_of: Vec<Vec<usize>> = Vec::new();
        for (h, &label) in labels.iter().enumerate() {
            let node = *remap.entry(label).or_insert_with(|| {
                members_of.push(Vec::new());
                members_of.len() - 1
            });
            node_of.push(node);
            members_of[node].push(h);
        }
        Self {
            node_of,
            members_of,
        }
    }

    /// Builds from explicit member lists (e.g. read back from a graph file).
    pub fn from_members(members: Vec<Vec<usize>>, num_headlines: usize) -> Result<Self> {
        let mut labels = vec![usize::MAX; num_headlines];
        for (node, ms) in members.iter().enumerate() {
            for &h in ms {
                if h >= num_headlines || labels[h] != usize::MAX {
                    return Err(Error::Invalid(format!(
                        "headline {h} is out of range or assigned twice"
                    )));
                }
                labels[h] = node;
            }
        }
        if labels.contains(&usize::MAX) {
            return Err(Error::Invalid(
                "node members do not cover every headline".into(),
            ));
        }
        let assignment = Self::from_labels(&labels);
        if assignment.members_of != members {
            return Err(Error::Invalid(
                "node members are not in canonical order".into(),
            ));
        }
        Ok(assignment)
    }

    pub fn num_nodes(&self) -> usize {
        self.members_of.len()
    }

    pub fn num_headlines(&self) -> usize {
        self.node_of.len()
    }

    pub fn node_of(&self, headline: usize) -> usize {
        self.node_of[headline]
    }

    pub fn node_map(&self) -> &[usize] {
        &self.node_of
    }

    pub fn members(&self, node: usize) -> &[usize] {
        &self.members_of[node]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members_of
    }
}

#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Returns false when `a` and `b` were already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
        true
    }
}

/// One agglomeration step: clusters identified by their smallest member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

/// Clusters headline embeddings, returning the partition and the sequence of
/// merges performed.
///
/// Merges are taken in ascending distance; among equal distances, the pair
/// whose `(min member of first, min member of second)` is smallest wins.
pub fn cluster_with_merges(
    embeddings: &[Vec<f64>],
    threshold: f64,
) -> Result<(NodeAssignment, Vec<Merge>)> {
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!(
            "distance threshold must be positive, got {threshold}"
        )));
    }
    let n = embeddings.len();
    if let Some(first) = embeddings.first() {
        let d = first.len();
        for e in embeddings {
            if e.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: e.len(),
                });
            }
        }
    }
    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| {
            let nrm = norm(e);
            if nrm == 0.0 {
                Err(Error::Domain("zero-norm embedding".into()))
            } else {
                Ok(nrm)
            }
        })
        .collect::<Result<_>>()?;

    // Row-parallel; each row yields its pairs in ascending j and rows are
    // concatenated in order, so the edge list is independent of scheduling.
    // Same arithmetic as `cosine_distance`, bit for bit.
    let mut edges: Vec<(f64, usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let norms = &norms;
            (i + 1..n).filter_map(move |j| {
                let d = (1.0 - dot(&embeddings[i], &embeddings[j]) / (norms[i] * norms[j]))
                    .clamp(0.0, 2.0);
                (d < threshold).then_some((d, i, j))
            })
        })
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut uf = UnionFind::new(n);
    // smallest member of the cluster rooted at each union-find root
    let mut min_member: Vec<usize> = (0..n).collect();
    let mut merges = Vec::new();
    let mut k = 0;
    while k < edges.len() {
        // one group of equal distances; order its merges by cluster minima
        let mut end = k;
        while end < edges.len() && edges[end].0 == edges[k].0 {
            end += 1;
        }
        let distance = edges[k].0;
        loop {
            let mut best: Option<(usize, usize, usize, usize)> = None;
            for &(_, i, j) in &edges[k..end] {
                let (ri, rj) = (uf.find(i), uf.find(j));
                if ri == rj {
                    continue;
                }
                let (a, b) = (min_member[ri], min_member[rj]);
                let key = (a.min(b), a.max(b), ri, rj);
                if best.map_or(true, |bk| (key.0, key.1) < (bk.0, bk.1)) {
                    best = Some(key);
                }
            }
            let Some((left, right, ri, rj)) = best else {
                break;
            };
            uf.union(ri, rj);
            let root = uf.find(ri);
            min_member[root] = left;
            merges.push(Merge {
                left,
                right,
                distance,
            });
        }
        k = end;
    }

    let labels: Vec<usize> = (0..n).map(|h| uf.find(h)).collect();
    Ok((NodeAssignment::from_labels(&labels), merges))
}

/// Deduplicates headlines into step nodes.
pub fn cluster_headlines(embeddings: &[Vec<f64>], threshold: f64) -> Result<NodeAssignment> {
    cluster_with_merges(embeddings, threshold).map(|(a, _)| a)
}
