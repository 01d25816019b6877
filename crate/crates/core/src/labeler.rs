//! Pseudo-label generation from the procedural knowledge graph.
//!
//! For each segment: the matched nodes (VNM), the tasks of those nodes in
//! the step database and in the corpus annotations (VTM), the nodes those
//! tasks need (TCL), the k-hop in/out neighbours of the matched nodes (NRL)
//! and the raw top headlines (VSM baseline).
//!
//! `labels.jsonl` starts with one header line describing the class spaces,
//! followed by one record per segment in (video, segment) order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SegmentCorpus, StepDatabase};
use crate::dedup::NodeAssignment;
use crate::error::{Error, Result};
use crate::graph::{khop_neighbors, Direction, ProceduralKnowledgeGraph};
use crate::matcher::{node_scores, top_k, top_k_nodes, vsm_top_headlines, Matcher};

pub const LABEL_FORMAT: &str = "pkgforge-labels";
pub const LABEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub vnm_k: usize,
    pub vtm_corpus_k: usize,
    pub tcl_corpus_k: usize,
    pub nrl_hops: usize,
    pub nrl_top_per_hop: Vec<usize>,
    pub vsm_k: usize,
    /// Reject all node matches of a segment whose best node score is below
    /// this value. Off by default.
    pub background_floor: Option<f64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            vnm_k: 3,
            vtm_corpus_k: 3,
            tcl_corpus_k: 3,
            nrl_hops: 2,
            nrl_top_per_hop: vec![5, 3],
            vsm_k: 3,
            background_floor: None,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nrl_hops > self.nrl_top_per_hop.len() {
            return Err(Error::Config(format!(
                "nrl_hops = {} but only {} top-per-hop sizes given",
                self.nrl_hops,
                self.nrl_top_per_hop.len()
            )));
        }
        if self.vnm_k == 0 {
            return Err(Error::Config("vnm_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Headline x corpus-task counts of segment-node matches.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceMatrix {
    num_headlines: usize,
    task_names: Vec<String>,
    counts: Vec<u64>,
}

impl OccurrenceMatrix {
    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn task_column(&self, name: &str) -> Option<usize> {
        self.task_names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
    }

    pub fn get(&self, headline: usize, task: usize) -> u64 {
        self.counts[headline * self.task_names.len() + task]
    }

    fn row(&self, headline: usize) -> &[u64] {
        let t = self.task_names.len();
        &self.counts[headline * t..(headline + 1) * t]
    }

    pub fn column_sum(&self, task: usize) -> u64 {
        (0..self.num_headlines).map(|h| self.get(h, task)).sum()
    }
}

/// For every segment of every video with a task name, adds one count per
/// member headline of each matched node to that task's column. Columns are
/// the distinct observed task names in lexicographic order. Returns the
/// matrix and the number of videos skipped for lacking a task name.
pub fn build_occurrence_matrix(
    video_tasks: &[Option<String>],
    vnm: &[Vec<Vec<(usize, f64)>>],
    assignment: &NodeAssignment,
) -> (OccurrenceMatrix, usize) {
    let task_names: Vec<String> = video_tasks
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut m = OccurrenceMatrix {
        num_headlines: assignment.num_headlines(),
        counts: vec![0; assignment.num_headlines() * task_names.len()],
        task_names,
    };
    let mut skipped = 0;
    for (task, segments) in video_tasks.iter().zip(vnm) {
        let Some(task) = task else {
            skipped += 1;
            continue;
        };
        let col = m
            .task_column(task)
            .expect("column exists for observed task");
        let t = m.task_names.len();
        for seg in segments {
            for &(node, _) in seg {
                for &h in assignment.members(node) {
                    m.counts[h * t + col] += 1;
                }
            }
        }
    }
    if skipped > 0 {
        warn!("{skipped} videos without a task name were left out of the occurrence matrix");
    }
    if m.task_names.is_empty() {
        warn!("no corpus task names: occurrence matrix is empty");
    }
    (m, skipped)
}

/// Top-`k` nodes by score, optionally rejecting background segments.
pub fn vnm_labels(node_scores: &[f64], k: usize, floor: Option<f64>) -> Vec<(usize, f64)> {
    top_k_nodes(node_scores, k, floor)
}

/// Sorted task ids of every member headline of the matched nodes.
pub fn vtm_db_labels(vnm: &[(usize, f64)], graph: &ProceduralKnowledgeGraph) -> Vec<String> {
    vnm.iter()
        .flat_map(|&(n, _)| graph.nodes()[n].members.iter().map(|m| m.task_id.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Corpus tasks ranked by the summed occurrence rows of the matched nodes'
/// member headlines; zero totals dropped, ties by task name.
pub fn vtm_corpus_labels(
    vnm: &[(usize, f64)],
    occurrence: &OccurrenceMatrix,
    assignment: &NodeAssignment,
    k: usize,
) -> Vec<String> {
    let mut totals = vec![0u64; occurrence.num_tasks()];
    for &(n, _) in vnm {
        for &h in assignment.members(n) {
            for (t, c) in totals.iter_mut().zip(occurrence.row(h)) {
                *t += c;
            }
        }
    }
    // columns are sorted by name, so the id tie rule is the name tie rule
    top_k(
        totals
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t, c as f64)),
        k,
    )
    .into_iter()
    .map(|(t, _)| occurrence.task_names[t].clone())
    .collect()
}

/// Nodes of every step of the given database tasks.
pub fn tcl_db_labels(
    task_ids: &[String],
    db: &StepDatabase,
    assignment: &NodeAssignment,
) -> Vec<usize> {
    task_ids
        .iter()
        .filter_map(|id| db.task_index(id))
        .flat_map(|t| db.task_range(t).map(|h| assignment.node_of(h)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// The `k` nodes with the highest nonzero occurrence in one corpus task
/// column (headline counts summed per node).
pub fn task_top_nodes(
    task: usize,
    occurrence: &OccurrenceMatrix,
    assignment: &NodeAssignment,
    k: usize,
) -> Vec<usize> {
    let counts = assignment
        .all_members()
        .iter()
        .enumerate()
        .map(|(n, members)| {
            let c: u64 = members.iter().map(|&h| occurrence.get(h, task)).sum();
            (n, c as f64)
        });
    top_k(counts.filter(|&(_, c)| c > 0.0), k)
        .into_iter()
        .map(|(n, _)| n)
        .collect()
}

/// Union over the given corpus tasks of each task's top-`k` nodes.
pub fn tcl_corpus_labels(
    task_names: &[String],
    occurrence: &OccurrenceMatrix,
    assignment: &NodeAssignment,
    k: usize,
) -> Vec<usize> {
    task_names
        .iter()
        .filter_map(|name| occurrence.task_column(name))
        .flat_map(|t| task_top_nodes(t, occurrence, assignment, k))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NrlLabels {
    #[serde(rename = "in")]
    pub inn: Vec<Vec<(usize, f64)>>,
    pub out: Vec<Vec<(usize, f64)>>,
}

/// Ranked k-hop neighbours of the matched node set; hop `k` keeps the best
/// `top_per_hop[k-1]` nodes with positive confidence.
pub fn nrl_labels(
    vnm: &[(usize, f64)],
    graph: &ProceduralKnowledgeGraph,
    hops: usize,
    top_per_hop: &[usize],
) -> NrlLabels {
    let seeds: Vec<usize> = vnm.iter().map(|&(n, _)| n).collect();
    let rank = |dir| {
        khop_neighbors(graph, &seeds, hops, dir)
            .into_iter()
            .zip(top_per_hop)
            .map(|(hop, &k)| top_k(hop.into_iter().filter(|&(_, c)| c > 0.0), k))
            .collect()
    };
    NrlLabels {
        inn: rank(Direction::In),
        out: rank(Direction::Out),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub video_id: String,
    pub segment_index: usize,
    pub vnm: Vec<(usize, f64)>,
    pub vtm_db: Vec<String>,
    pub vtm_corpus: Vec<String>,
    pub tcl_db: Vec<usize>,
    pub tcl_corpus: Vec<usize>,
    pub nrl: NrlLabels,
    pub vsm: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: Option<String>,
    pub num_nodes: usize,
    pub num_headlines: usize,
    pub db_task_ids: Vec<String>,
    pub corpus_task_names: Vec<String>,
    pub nrl_hops: usize,
    pub skipped_videos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub header: LabelHeader,
    pub records: Vec<PseudoLabelSet>,
}

impl LabelFile {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        };
        let header: LabelHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| parse_err(1, e))?
            }
            None => return Err(Error::format(path, "missing label header")),
        };
        if header.format != LABEL_FORMAT || header.version != LABEL_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "unsupported label format {} v{}",
                    header.format, header.version
                ),
            ));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?);
        }
        Ok(Self { header, records })
    }
}

/// Generates one label record per segment, in (video, segment) order.
pub fn emit_labels(
    corpus: &SegmentCorpus,
    db: &StepDatabase,
    graph: &ProceduralKnowledgeGraph,
    config: &LabelConfig,
    config_hash: Option<String>,
) -> Result<LabelFile> {
    config.validate()?;
    let assignment = graph.assignment(db)?;
    let matcher = Matcher::new(db);

    // pass 1: node and headline rankings per segment
    type SegRank = (Vec<(usize, f64)>, Vec<(usize, f64)>);
    let ranked: Vec<Vec<SegRank>> = corpus
        .videos
        .par_iter()
        .map(|v| {
            (0..v.num_segments())
                .map(|i| {
                    let scores = matcher.headline_scores(&v.features.row_f64(i))?;
                    let nodes = node_scores(&scores, &assignment);
                    Ok((
                        vnm_labels(&nodes, config.vnm_k, config.background_floor),
                        vsm_top_headlines(&scores, config.vsm_k),
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let vnm: Vec<Vec<Vec<(usize, f64)>>> = ranked
        .iter()
        .map(|v| v.iter().map(|(n, _)| n.clone()).collect())
        .collect();
    let video_tasks: Vec<Option<String>> =
        corpus.videos.iter().map(|v| v.task_name.clone()).collect();
    let (occurrence, skipped) = build_occurrence_matrix(&video_tasks, &vnm, &assignment);

    // per-task TCL sets do not depend on the segment
    let tcl_corpus_by_task: Vec<Vec<usize>> = (0..occurrence.num_tasks())
        .map(|t| task_top_nodes(t, &occurrence, &assignment, config.tcl_corpus_k))
        .collect();

    // pass 2: everything derived from the matched nodes
    let records: Vec<Vec<PseudoLabelSet>> = corpus
        .videos
        .par_iter()
        .zip(&ranked)
        .map(|(video, segs)| {
            segs.iter()
                .enumerate()
                .map(|(i, (vnm, vsm))| {
                    let vtm_db = vtm_db_labels(vnm, graph);
                    let vtm_corpus =
                        vtm_corpus_labels(vnm, &occurrence, &assignment, config.vtm_corpus_k);
                    let tcl_db = tcl_db_labels(&vtm_db, db, &assignment);
                    let tcl_corpus = vtm_corpus
                        .iter()
                        .filter_map(|n| occurrence.task_column(n))
                        .flat_map(|t| tcl_corpus_by_task[t].iter().copied())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    PseudoLabelSet {
                        video_id: video.video_id.clone(),
                        segment_index: i,
                        nrl: nrl_labels(vnm, graph, config.nrl_hops, &config.nrl_top_per_hop),
                        vnm: vnm.clone(),
                        vtm_db,
                        vtm_corpus,
                        tcl_db,
                        tcl_corpus,
                        vsm: vsm.clone(),
                    }
                })
                .collect()
        })
        .collect();

    Ok(LabelFile {
        header: LabelHeader {
            format: LABEL_FORMAT.into(),
            version: LABEL_VERSION,
            config_hash,
            num_nodes: graph.num_nodes(),
            num_headlines: db.num_headlines(),
            db_task_ids: db.tasks().iter().map(|t| t.task_id.clone()).collect(),
            corpus_task_names: occurrence.task_names().to_vec(),
            nrl_hops: config.nrl_hops,
            skipped_videos: skipped,
        },
        records: records.into_iter().flatten().collect(),
    })
}

/// Every id in every record resolves against the header's class spaces.
pub fn check_referential_integrity(labels: &LabelFile) -> Result<()> {
    let h = &labels.header;
    let db_tasks: BTreeSet<&str> = h.db_task_ids.iter().map(String::as_str).collect();
    let corpus_tasks: BTreeSet<&str> = h.corpus_task_names.iter().map(String::as_str).collect();
    let bad = |what: &str, r: &PseudoLabelSet| {
        Err(Error::Invalid(format!(
            "{} segment {}: unresolved {what}",
            r.video_id, r.segment_index
        )))
    };
    for r in &labels.records {
        let nodes = r
            .vnm
            .iter()
            .map(|x| x.0)
            .chain(r.tcl_db.iter().copied())
            .chain(r.tcl_corpus.iter().copied())
            .chain(r.nrl.inn.iter().chain(&r.nrl.out).flatten().map(|x| x.0));
        if nodes.into_iter().any(|n| n >= h.num_nodes) {
            return bad("node id", r);
        }
        if r.vsm.iter().any(|x| x.0 >= h.num_headlines) {
            return bad("headline id", r);
        }
        if r.vtm_db.iter().any(|t| !db_tasks.contains(t.as_str())) {
            return bad("database task", r);
        }
        if r.vtm_corpus
            .iter()
            .any(|t| !corpus_tasks.contains(t.as_str()))
        {
            return bad("corpus task", r);
        }
    }
    Ok(())
}

/// Class name -> index in list order.
pub(crate) fn class_map(names: &[String]) -> BTreeMap<&str, usize> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect()
}
