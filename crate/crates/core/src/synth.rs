//! Seeded synthetic worlds with a known procedural graph.
//!
//! Canonical step embeddings live in the first `signal_dim` coordinates and
//! are drawn with bounded pairwise cosine. Database headlines are small
//! rotations ("paraphrases") of their step's canonical vector. A segment of
//! step `s` is `signal_scale * c_s + style_v + noise`, where `style_v` is a
//! per-video offset confined to the remaining coordinates (so it never
//! changes a dot product with a headline) and `noise` is isotropic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureMatrix, SegmentCorpus, StepDatabase, StepHeadline, Task, Video};
use crate::downstream::{Annotations, StepSpan, VideoAnnotation};
use crate::error::{Error, Result};
use crate::graph::ProceduralKnowledgeGraph;

const MAX_DRAWS_PER_STEP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    Zero,
    Low,
    Medium,
    High,
}

impl NoisePreset {
    pub fn sigma(self) -> f64 {
        match self {
            NoisePreset::Zero => 0.0,
            NoisePreset::Low => 0.5,
            NoisePreset::Medium => 1.0,
            NoisePreset::High => 2.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(NoisePreset::Zero),
            "low" => Ok(NoisePreset::Low),
            "medium" => Ok(NoisePreset::Medium),
            "high" => Ok(NoisePreset::High),
            _ => Err(Error::Config(format!("unknown noise preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_tasks: usize,
    /// Inclusive range of steps per task.
    pub steps_per_task: (usize, usize),
    /// Size of the pool of steps that recur across tasks.
    pub n_shared_steps: usize,
    /// Share of each task's steps drawn from the shared pool (rounded).
    pub shared_fraction: f64,
    pub n_videos: usize,
    /// Inclusive range of segments per step occurrence.
    pub segments_per_step: (usize, usize),
    pub dim: usize,
    /// Leading coordinates that carry step embeddings.
    pub signal_dim: usize,
    pub noise_sigma: f64,
    /// Per-coordinate scale of the per-video offset outside the signal
    /// coordinates.
    pub style_sigma: f64,
    pub signal_scale: f64,
    /// Largest allowed |cosine| between canonical step embeddings.
    pub max_abs_cos: f64,
    /// Variant headlines per step; 0 uses the canonical vector verbatim.
    pub paraphrase_count: usize,
    /// Angle in radians between a paraphrase and its canonical vector.
    pub paraphrase_angle: f64,
    pub skip_prob: f64,
    pub substitute_prob: f64,
    /// Share of videos that carry downstream task/step annotations.
    pub annotated_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_tasks: 20,
            steps_per_task: (8, 12),
            n_shared_steps: 6,
            shared_fraction: 0.1,
            n_videos: 200,
            segments_per_step: (2, 4),
            dim: 256,
            signal_dim: 128,
            noise_sigma: NoisePreset::Low.sigma(),
            style_sigma: 6.0,
            signal_scale: 12.0,
            max_abs_cos: 0.5,
            paraphrase_count: 2,
            paraphrase_angle: 0.18,
            skip_prob: 0.1,
            substitute_prob: 0.05,
            annotated_fraction: 0.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_tasks == 0 || self.n_videos == 0 || self.dim == 0 || self.signal_dim == 0 {
            return bad("task, video and dimension counts must be positive");
        }
        if self.signal_dim > self.dim {
            return bad("signal_dim exceeds dim");
        }
        let (a, b) = self.steps_per_task;
        if a == 0 || a > b {
            return bad("steps_per_task must be a non-empty positive range");
        }
        let (a, b) = self.segments_per_step;
        if a == 0 || a > b {
            return bad("segments_per_step must be a non-empty positive range");
        }
        if !(self.noise_sigma >= 0.0) || !(self.style_sigma >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if !(self.signal_scale > 0.0) {
            return bad("signal_scale must be positive");
        }
        if !(self.max_abs_cos > 0.0 && self.max_abs_cos < 1.0) {
            return bad("max_abs_cos must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.shared_fraction)
            || !(0.0..=1.0).contains(&self.skip_prob)
            || !(0.0..=1.0).contains(&self.substitute_prob)
            || !(0.0..=1.0).contains(&self.annotated_fraction)
        {
            return bad("probabilities and fractions must be in [0, 1]");
        }
        if self.shared_fraction > 0.0 && self.n_shared_steps == 0 {
            return bad("shared steps requested but the shared pool is empty");
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.paraphrase_angle) {
            return bad("paraphrase_angle must be in [0, pi/2)");
        }
        Ok(())
    }

    /// Expected dot product of a clean segment with a matching headline.
    pub fn true_match_score(&self) -> f64 {
        let cos = if self.paraphrase_count == 0 {
            1.0
        } else {
            self.paraphrase_angle.cos()
        };
        self.signal_scale * cos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueStep {
    pub step_id: usize,
    pub name: String,
    pub embedding: Vec<f64>,
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransitionCount {
    pub src: usize,
    pub dst: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueVideo {
    pub video_id: String,
    pub task: usize,
    pub steps: Vec<StepSpan>,
    /// Whether the video is part of the downstream annotation set.
    pub annotated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub steps: Vec<TrueStep>,
    /// Canonical step sequence of each task, in task order.
    pub task_steps: Vec<Vec<usize>>,
    pub task_ids: Vec<String>,
    pub task_names: Vec<String>,
    /// True step of every database headline, by global headline index.
    pub headline_steps: Vec<usize>,
    /// Consecutive step pairs of the task definitions.
    pub canonical_transitions: Vec<(usize, usize)>,
    /// Consecutive step pairs realized in the videos, with counts.
    pub observed_transitions: Vec<TransitionCount>,
    pub videos: Vec<TrueVideo>,
    pub true_match_score: f64,
}

impl GroundTruth {
    /// Fewest video occurrences whose summed clean instance scores exceed
    /// `instance_threshold`.
    pub fn implied_min_support(&self, instance_threshold: f64) -> usize {
        let per = self.true_match_score * self.true_match_score;
        (instance_threshold / per).floor() as usize + 1
    }

    pub fn annotations(&self) -> Annotations {
        Annotations {
            num_tasks: self.task_ids.len(),
            num_steps: self.steps.len(),
            videos: self
                .videos
                .iter()
                .filter(|v| v.annotated)
                .map(|v| VideoAnnotation {
                    video_id: v.video_id.clone(),
                    task: v.task,
                    steps: v.steps.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub truth: GroundTruth,
    pub database: StepDatabase,
    pub corpus: SegmentCorpus,
}

fn gaussian_unit(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Canonical vectors by rejection sampling in the signal coordinates.
fn canonical_embeddings(
    config: &WorldConfig,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut accepted = None;
        for _ in 0..MAX_DRAWS_PER_STEP {
            let v = gaussian_unit(rng, config.signal_dim);
            if out
                .iter()
                .all(|u| dot(&u[..config.signal_dim], &v).abs() <= config.max_abs_cos)
            {
                accepted = Some(v);
                break;
            }
        }
        let Some(mut v) = accepted else {
            return Err(Error::Config(format!(
                "infeasible separation: could not place step {k} of {count} with |cos| <= {} in {} dimensions",
                config.max_abs_cos, config.signal_dim
            )));
        };
        v.resize(config.dim, 0.0);
        out.push(v);
    }
    Ok(out)
}

/// Unit vector at `angle` from `c`, rotated toward a random direction
/// inside the signal coordinates.
fn paraphrase(c: &[f64], angle: f64, signal_dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut u = gaussian_unit(rng, signal_dim);
    let proj = dot(&c[..signal_dim], &u);
    for (ui, ci) in u.iter_mut().zip(c) {
        *ui -= proj * ci;
    }
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut v: Vec<f64> = c.to_vec();
    for i in 0..signal_dim {
        v[i] = angle.cos() * c[i] + angle.sin() * u[i] / n;
    }
    v
}

fn step_name(id: usize) -> String {
    format!("step-{id:03}")
}

/// Realized step sequence of one video: each canonical step is skipped with
/// `skip_prob` (at least one survives) or else, with `substitute_prob`,
/// replaced by a random step that does not belong to the task.
fn realize_sequence(
    steps: &[usize],
    num_steps: usize,
    config: &WorldConfig,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let own: BTreeSet<usize> = steps.iter().copied().collect();
    let foreign: Vec<usize> = (0..num_steps).filter(|s| !own.contains(s)).collect();
    let mut seq = Vec::with_capacity(steps.len());
    for &s in steps {
        if rng.gen_bool(config.skip_prob) {
            continue;
        }
        if !foreign.is_empty() && rng.gen_bool(config.substitute_prob) {
            seq.push(*foreign.choose(rng).expect("non-empty"));
        } else {
            seq.push(s);
        }
    }
    if seq.is_empty() {
        seq.push(steps[0]);
    }
    seq
}

/// Builds the world for `config`. Structure comes from one seeded stream;
/// each video draws from its own stream of the same seed.
pub fn generate(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // task step lists: own steps get fresh ids, shared slots draw from the pool
    let n_shared = if config.shared_fraction > 0.0 {
        config.n_shared_steps
    } else {
        0
    };
    let mut task_steps = Vec::with_capacity(config.n_tasks);
    let mut next_id = n_shared;
    for _ in 0..config.n_tasks {
        let len = rng.gen_range(config.steps_per_task.0..=config.steps_per_task.1);
        let n_slots = ((len as f64) * config.shared_fraction).round() as usize;
        let n_slots = n_slots.min(n_shared).min(len);
        let mut steps: Vec<usize> = (next_id..next_id + len - n_slots).collect();
        next_id += len - n_slots;
        let picks = rand::seq::index::sample(&mut rng, n_shared.max(1), n_slots).into_vec();
        for p in picks {
            let at = rng.gen_range(0..=steps.len());
            steps.insert(at, p);
        }
        task_steps.push(steps);
    }
    // drop shared steps that no task drew, renumbering densely
    let used: BTreeSet<usize> = task_steps.iter().flatten().copied().collect();
    let renumber: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    for steps in &mut task_steps {
        for s in steps.iter_mut() {
            *s = renumber[s];
        }
    }
    let num_steps = used.len();
    let shared_ids: BTreeSet<usize> = used
        .iter()
        .filter(|&&s| s < n_shared)
        .map(|s| renumber[s])
        .collect();

    let canon = canonical_embeddings(config, num_steps, &mut rng)?;
    let variants: Vec<Vec<Vec<f64>>> = canon
        .iter()
        .map(|c| {
            (0..config.paraphrase_count.max(1))
                .map(|_| {
                    if config.paraphrase_count == 0 {
                        c.clone()
                    } else {
                        paraphrase(c, config.paraphrase_angle, config.signal_dim, &mut rng)
                    }
                })
                .collect()
        })
        .collect();

    let task_ids: Vec<String> = (0..config.n_tasks).map(|t| format!("t{t:03}")).collect();
    let task_names: Vec<String> = (0..config.n_tasks)
        .map(|t| format!("task {t:03}"))
        .collect();
    let mut occurrence = vec![0usize; num_steps];
    let mut headline_steps = Vec::new();
    let mut tasks = Vec::with_capacity(config.n_tasks);
    for (t, steps) in task_steps.iter().enumerate() {
        let mut headlines = Vec::with_capacity(steps.len());
        for &s in steps {
            let v = occurrence[s] % variants[s].len();
            occurrence[s] += 1;
            headline_steps.push(s);
            headlines.push(StepHeadline {
                headline: format!("{} variant {v}", step_name(s)),
                embedding: variants[s][v].iter().map(|&x| x as f32).collect(),
            });
        }
        tasks.push(Task {
            task_id: task_ids[t].clone(),
            task_name: task_names[t].clone(),
            steps: headlines,
        });
    }
    let database = StepDatabase::new(tasks)?;

    let canonical_transitions: Vec<(usize, usize)> = task_steps
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (w[0], w[1])))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let videos: Vec<(Video, TrueVideo, Vec<usize>)> = (0..config.n_videos)
        .into_par_iter()
        .map(|i| {
            let mut vr = ChaCha8Rng::seed_from_u64(config.seed);
            vr.set_stream(i as u64 + 1);
            let task = i % config.n_tasks;
            let seq = realize_sequence(&task_steps[task], num_steps, config, &mut vr);
            let style: Vec<f64> = (config.signal_dim..config.dim)
                .map(|_| {
                    config.style_sigma
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut vr)
                })
                .collect();
            let mut spans = Vec::with_capacity(seq.len());
            let mut data = Vec::new();
            let mut rows = 0;
            for &s in &seq {
                let n = vr.gen_range(config.segments_per_step.0..=config.segments_per_step.1);
                spans.push(StepSpan {
                    step: s,
                    start: rows,
                    end: rows + n,
                });
                for _ in 0..n {
                    for j in 0..config.dim {
                        let mut x = config.signal_scale * canon[s][j];
                        if j >= config.signal_dim {
                            x += style[j - config.signal_dim];
                        }
                        if config.noise_sigma > 0.0 {
                            let z: f64 = StandardNormal.sample(&mut vr);
                            x += config.noise_sigma * z;
                        }
                        data.push(x as f32);
                    }
                }
                rows += n;
            }
            let video_id = format!("v{i:05}");
            let features = FeatureMatrix::new(rows, config.dim, data).expect("consistent shape");
            (
                Video {
                    video_id: video_id.clone(),
                    task_name: Some(task_names[task].clone()),
                    features,
                },
                TrueVideo {
                    video_id,
                    task,
                    steps: spans,
                    annotated: false,
                },
                seq,
            )
        })
        .collect();

    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (_, _, seq) in &videos {
        for w in seq.windows(2) {
            if w[0] != w[1] {
                *counts.entry((w[0], w[1])).or_default() += 1;
            }
        }
    }
    let (corpus_videos, mut true_videos): (Vec<Video>, Vec<TrueVideo>) =
        videos.into_iter().map(|(v, t, _)| (v, t)).unzip();
    let n_annotated = (config.n_videos as f64 * config.annotated_fraction).round() as usize;
    for i in rand::seq::index::sample(&mut rng, config.n_videos, n_annotated) {
        true_videos[i].annotated = true;
    }

    let truth = GroundTruth {
        steps: canon
            .into_iter()
            .enumerate()
            .map(|(i, embedding)| TrueStep {
                step_id: i,
                name: step_name(i),
                embedding,
                shared: shared_ids.contains(&i),
            })
            .collect(),
        task_steps,
        task_ids,
        task_names,
        headline_steps,
        canonical_transitions,
        observed_transitions: counts
            .into_iter()
            .map(|((src, dst), count)| TransitionCount { src, dst, count })
            .collect(),
        videos: true_videos,
        true_match_score: config.true_match_score(),
    };
    Ok(World {
        truth,
        database,
        corpus: SegmentCorpus::new(corpus_videos)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub node_purity: f64,
}

/// Majority true step of each node's member headlines (ties: smallest step).
pub fn node_majority_steps(
    graph: &ProceduralKnowledgeGraph,
    truth: &GroundTruth,
) -> Result<Vec<usize>> {
    let task_index: BTreeMap<&str, usize> = truth
        .task_ids
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    graph
        .nodes()
        .iter()
        .map(|node| {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for m in &node.members {
                let step = task_index
                    .get(m.task_id.as_str())
                    .and_then(|&t| truth.task_steps[t].get(m.step_index))
                    .ok_or_else(|| {
                        Error::Invalid(format!(
                            "graph member {}#{} is not in the synthetic world",
                            m.task_id, m.step_index
                        ))
                    })?;
                *votes.entry(*step).or_default() += 1;
            }
            votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&s, _)| s)
                .ok_or_else(|| Error::Invalid(format!("node {} has no members", node.node_id)))
        })
        .collect()
}

/// Edge precision, edge recall and node purity of a graph against the
/// world it was built from.
///
/// Nodes map to the majority true step of their members. A predicted edge
/// is correct when its mapped pair is a canonical or observed transition.
/// Recall is measured over canonical transitions plus observed transitions
/// seen at least `min_support` times. An empty edge set has precision 0.
pub fn graph_recovery_metrics(
    graph: &ProceduralKnowledgeGraph,
    truth: &GroundTruth,
    min_support: usize,
) -> Result<RecoveryMetrics> {
    let majority = node_majority_steps(graph, truth)?;
    let mut all: BTreeSet<(usize, usize)> = truth.canonical_transitions.iter().copied().collect();
    let mut recallable = all.clone();
    for t in &truth.observed_transitions {
        all.insert((t.src, t.dst));
        if t.count >= min_support {
            recallable.insert((t.src, t.dst));
        }
    }
    let mapped: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .map(|e| (majority[e.src], majority[e.dst]))
        .collect();
    let correct = mapped.iter().filter(|p| all.contains(p)).count();
    let predicted: BTreeSet<(usize, usize)> = mapped.into_iter().collect();
    let recovered = recallable.iter().filter(|p| predicted.contains(p)).count();

    let mut pure = 0;
    let mut total = 0;
    for (node, step) in graph.nodes().iter().zip(&majority) {
        let task_index = |id: &str| truth.task_ids.iter().position(|t| t == id);
        for m in &node.members {
            total += 1;
            let t = task_index(&m.task_id).expect("checked by node_majority_steps");
            pure += usize::from(truth.task_steps[t][m.step_index] == *step);
        }
    }
    Ok(RecoveryMetrics {
        edge_precision: ratio(correct, graph.edges().len()),
        edge_recall: ratio(recovered, recallable.len()),
        node_purity: ratio(pure, total),
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub const TRUTH_FILE: &str = "truth.json";
pub const DOWNSTREAM_FILE: &str = "downstream_labels.jsonl";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub config_hash: Option<String>,
    pub world: WorldConfig,
    pub truth: GroundTruth,
}

impl TruthFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("truth serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Writes steps, manifest with feature files, truth and downstream labels
/// into `dir`.
pub fn write_world(
    dir: &Path,
    world: &World,
    config: &WorldConfig,
    config_hash: Option<String>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    world.database.save(dir.join(STEPS_FILE))?;
    world.corpus.save(dir.join(MANIFEST_FILE))?;
    let truth = TruthFile {
        config_hash,
        world: config.clone(),
        truth: world.truth.clone(),
    };
    let p = dir.join(TRUTH_FILE);
    fs::write(&p, truth.to_json()).map_err(|e| Error::io(&p, e))?;
    world.truth.annotations().save(dir.join(DOWNSTREAM_FILE))
}
