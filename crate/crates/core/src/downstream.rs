//! Downstream evaluation: task recognition (TR), step recognition (SR) and
//! step forecasting (SF) with an MLP over position-augmented, aggregated
//! segment features.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SegmentCorpus;
use crate::error::{Error, Result};
use crate::nn::{adam_step, argmax, softmax_cross_entropy, AdamConfig, AdamState, Mlp};
use crate::trainer::PaprikaModel;

pub const DOWNSTREAM_FORMAT: &str = "pkgforge-downstream";
pub const DOWNSTREAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "TR")]
    TaskRecognition,
    #[serde(rename = "SR")]
    StepRecognition,
    #[serde(rename = "SF")]
    StepForecasting,
}

impl TaskKind {
    pub fn code(self) -> &'static str {
        match self {
            TaskKind::TaskRecognition => "TR",
            TaskKind::StepRecognition => "SR",
            TaskKind::StepForecasting => "SF",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TR" => Ok(TaskKind::TaskRecognition),
            "SR" => Ok(TaskKind::StepRecognition),
            "SF" => Ok(TaskKind::StepForecasting),
            _ => Err(Error::Config(format!("unknown downstream task {s:?}"))),
        }
    }
}

/// Segments `[start, end)` of a video showing one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpan {
    pub step: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub task: usize,
    pub steps: Vec<StepSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationHeader {
    pub format: String,
    pub version: u32,
    pub num_tasks: usize,
    pub num_steps: usize,
}

/// Ground-truth task and step annotations (`downstream_labels.jsonl`): a
/// header line, then one line per video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotations {
    pub num_tasks: usize,
    pub num_steps: usize,
    pub videos: Vec<VideoAnnotation>,
}

impl Annotations {
    pub fn new(num_tasks: usize, num_steps: usize, videos: Vec<VideoAnnotation>) -> Result<Self> {
        for v in &videos {
            if v.task >= num_tasks {
                return Err(Error::Invalid(format!(
                    "video {} has task {} of {num_tasks}",
                    v.video_id, v.task
                )));
            }
            let mut prev_end = 0;
            for s in &v.steps {
                if s.step >= num_steps || s.start >= s.end || s.start < prev_end {
                    return Err(Error::Invalid(format!(
                        "video {} has a malformed step span {s:?}",
                        v.video_id
                    )));
                }
                prev_end = s.end;
            }
        }
        Ok(Self {
            num_tasks,
            num_steps,
            videos,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let header = AnnotationHeader {
            format: DOWNSTREAM_FORMAT.into(),
            version: DOWNSTREAM_VERSION,
            num_tasks: self.num_tasks,
            num_steps: self.num_steps,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for v in &self.videos {
            out.push_str(&serde_json::to_string(v).expect("annotation serializes"));
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
        let mut header = None;
        let mut videos = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            };
            if header.is_none() {
                let h: AnnotationHeader = serde_json::from_str(&line).map_err(err)?;
                if h.format != DOWNSTREAM_FORMAT || h.version != DOWNSTREAM_VERSION {
                    return Err(Error::format(path, "not a downstream annotation file"));
                }
                header = Some(h);
            } else {
                videos.push(serde_json::from_str(&line).map_err(err)?);
            }
        }
        let h = header.ok_or_else(|| Error::format(path, "missing annotation header"))?;
        Self::new(h.num_tasks, h.num_steps, videos)
    }
}

/// Where segment features come from: the stored features, or the adapter
/// applied to them. Everything downstream of this choice is identical.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    Raw,
    Adapter(Box<PaprikaModel>),
}

impl FeatureSource {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureSource::Raw => "raw",
            FeatureSource::Adapter(_) => "adapter",
        }
    }

    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            FeatureSource::Raw => Ok(features.clone()),
            FeatureSource::Adapter(model) => model.adapt(features),
        }
    }
}

/// One example: segments `[start, end)` of a video and its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownstreamExample {
    pub video: usize,
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl DownstreamExample {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Examples of one split; `features[video]` holds that video's segments.
#[derive(Debug, Clone)]
pub struct DownstreamDataset {
    pub kind: TaskKind,
    pub num_classes: usize,
    pub features: Vec<Array2<f64>>,
    pub train: Vec<DownstreamExample>,
    pub val: Vec<DownstreamExample>,
    pub test: Vec<DownstreamExample>,
}

impl DownstreamDataset {
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.ncols())
    }
}

/// Examples of one annotated video: TR = the whole video, SR = each step's
/// segments, SF = everything before step `j` predicting step `j` (`j >= 1`).
pub fn video_examples(
    kind: TaskKind,
    video: usize,
    ann: &VideoAnnotation,
    num_segments: usize,
) -> Vec<DownstreamExample> {
    let ex = |start, end, label| DownstreamExample {
        video,
        start,
        end,
        label,
    };
    match kind {
        TaskKind::TaskRecognition => vec![ex(0, num_segments, ann.task)],
        TaskKind::StepRecognition => ann
            .steps
            .iter()
            .map(|s| ex(s.start, s.end, s.step))
            .collect(),
        TaskKind::StepForecasting => ann
            .steps
            .iter()
            .skip(1)
            .map(|s| ex(0, s.start, s.step))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_len: usize,
    pub aggregation: Aggregation,
    pub hidden_task: usize,
    pub hidden_step: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            batch_size: 16,
            patience: 50,
            max_epochs: 300,
            max_len: 128,
            aggregation: Aggregation::Mean,
            hidden_task: 128,
            hidden_step: 768,
            train_fraction: 0.7,
            val_fraction: 0.15,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "invalid downstream learning rate or weight decay".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "downstream batch size, epochs and max_len must be positive".into(),
            ));
        }
        if self.hidden_task == 0 || self.hidden_step == 0 {
            return Err(Error::Config(
                "downstream hidden widths must be positive".into(),
            ));
        }
        let f = (self.train_fraction, self.val_fraction);
        if !(f.0 > 0.0 && f.1 >= 0.0 && f.0 + f.1 < 1.0) {
            return Err(Error::Config(
                "train/val fractions must be positive and leave a test share".into(),
            ));
        }
        Ok(())
    }

    pub fn hidden_for(&self, kind: TaskKind) -> usize {
        match kind {
            TaskKind::TaskRecognition => self.hidden_task,
            _ => self.hidden_step,
        }
    }
}

/// Builds seeded, video-disjoint train/val/test splits.
///
/// Annotated videos are shuffled and cut by the configured fractions; each
/// video's segments go through `source` once.
pub fn build_downstream_dataset(
    corpus: &SegmentCorpus,
    annotations: &Annotations,
    source: &FeatureSource,
    kind: TaskKind,
    config: &DownstreamConfig,
    seed: u64,
) -> Result<DownstreamDataset> {
    config.validate()?;
    let by_id: std::collections::HashMap<&str, usize> = corpus
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| (v.video_id.as_str(), i))
        .collect();
    let mut videos = Vec::with_capacity(annotations.videos.len());
    for ann in &annotations.videos {
        let &vi = by_id.get(ann.video_id.as_str()).ok_or_else(|| {
            Error::Invalid(format!("annotation for unknown video {}", ann.video_id))
        })?;
        let n = corpus.videos[vi].num_segments();
        if ann.steps.last().is_some_and(|s| s.end > n) {
            return Err(Error::Invalid(format!(
                "annotation of {} runs past its {n} segments",
                ann.video_id
            )));
        }
        videos.push((vi, ann));
    }
    if videos.is_empty() {
        return Err(Error::Invalid(format!(
            "no annotations available for {}",
            kind.code()
        )));
    }
    let features: Vec<Array2<f64>> = videos
        .par_iter()
        .map(|&(vi, _)| {
            let f = &corpus.videos[vi].features;
            let x = Array2::from_shape_vec(
                (f.rows(), f.dim()),
                f.as_slice().iter().map(|&v| v as f64).collect(),
            )
            .expect("feature matrix shape");
            source.transform(&x)
        })
        .collect::<Result<_>>()?;

    let mut examples: Vec<Vec<DownstreamExample>> = Vec::with_capacity(videos.len());
    for (k, &(vi, ann)) in videos.iter().enumerate() {
        let ex = video_examples(kind, k, ann, corpus.videos[vi].num_segments());
        if let Some(e) = ex.iter().find(|e| e.len() > config.max_len) {
            return Err(Error::Invalid(format!(
                "{} example of {} spans {} segments, more than max_len {}",
                kind.code(),
                ann.video_id,
                e.len(),
                config.max_len
            )));
        }
        examples.push(ex.into_iter().filter(|e| !e.is_empty()).collect());
    }

    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_train = ((n as f64 * config.train_fraction).round() as usize).clamp(1, n);
    let n_val = ((n as f64 * config.val_fraction).round() as usize).min(n - n_train);
    let collect = |ids: &[usize]| -> Vec<DownstreamExample> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.iter()
            .flat_map(|&v| examples[v].iter().copied())
            .collect()
    };
    let num_classes = match kind {
        TaskKind::TaskRecognition => annotations.num_tasks,
        _ => annotations.num_steps,
    };
    Ok(DownstreamDataset {
        kind,
        num_classes,
        features,
        train: collect(&order[..n_train]),
        val: collect(&order[n_train..n_train + n_val]),
        test: collect(&order[n_train + n_val..]),
    })
}

/// Learned positional table plus a one-hidden-layer classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamModel {
    pub positions: Array2<f64>,
    pub classifier: Mlp,
    pub aggregation: Aggregation,
}

impl DownstreamModel {
    /// Zero positional table, uniformly initialized classifier.
    pub fn new(
        dim: usize,
        hidden: usize,
        classes: usize,
        max_len: usize,
        aggregation: Aggregation,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            positions: Array2::zeros((max_len, dim)),
            classifier: Mlp::glorot(&[dim, hidden, classes], rng),
            aggregation,
        }
    }

    pub fn max_len(&self) -> usize {
        self.positions.nrows()
    }

    fn scale(&self, len: usize) -> f64 {
        match self.aggregation {
            Aggregation::Mean => 1.0 / len as f64,
            Aggregation::Sum => 1.0,
        }
    }

    /// Aggregated `feature + position` vectors of a batch, one row each.
    fn aggregate(
        &self,
        features: &[Array2<f64>],
        batch: &[DownstreamExample],
    ) -> Result<Array2<f64>> {
        let d = self.positions.ncols();
        let mut agg = Array2::zeros((batch.len(), d));
        for (mut row, e) in agg.outer_iter_mut().zip(batch) {
            if e.is_empty() {
                return Err(Error::Invalid("empty example sequence".into()));
            }
            if e.len() > self.max_len() {
                return Err(Error::Invalid(format!(
                    "sequence of {} segments exceeds max_len {}",
                    e.len(),
                    self.max_len()
                )));
            }
            let x = features[e.video].slice(ndarray::s![e.start..e.end, ..]);
            if x.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.ncols(),
                });
            }
            let s = self.scale(e.len());
            row += &(x.sum_axis(Axis(0)) * s);
            row += &(self
                .positions
                .slice(ndarray::s![..e.len(), ..])
                .sum_axis(Axis(0))
                * s);
        }
        Ok(agg)
    }

    /// Class scores for each example of a batch.
    pub fn forward(
        &self,
        features: &[Array2<f64>],
        batch: &[DownstreamExample],
    ) -> Result<Array2<f64>> {
        Ok(self.classifier.forward(&self.aggregate(features, batch)?))
    }

    pub fn predict(
        &self,
        features: &[Array2<f64>],
        batch: &[DownstreamExample],
    ) -> Result<Vec<usize>> {
        let logits = self.forward(features, batch)?;
        Ok(logits.outer_iter().map(argmax).collect())
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.positions.as_slice_mut().expect("standard layout")];
        out.extend(self.classifier.params_mut());
        out
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut out = vec![self.positions.as_slice().expect("standard layout")];
        out.extend(self.classifier.params());
        out
    }

    /// Mean cross entropy of a batch and its gradients (positional table
    /// first, then classifier tensors).
    fn loss_and_grads(
        &self,
        features: &[Array2<f64>],
        batch: &[DownstreamExample],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let agg = self.aggregate(features, batch)?;
        let (logits, cache) = self.classifier.forward_cached(&agg);
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels);
        let (grads, dagg) = self.classifier.backward(&cache, &dlogits);
        let mut dpos = Array2::<f64>::zeros(self.positions.dim());
        for (row, e) in dagg.outer_iter().zip(batch) {
            let g = &row * self.scale(e.len());
            for mut p in dpos.slice_mut(ndarray::s![..e.len(), ..]).outer_iter_mut() {
                p += &g;
            }
        }
        let mut out = vec![dpos.into_raw_vec()];
        for g in grads {
            out.push(g.weight.into_raw_vec());
            out.push(g.bias.into_raw_vec());
        }
        Ok((loss, out))
    }
}

/// Fraction of examples whose arg-max class equals the label.
pub fn evaluate(
    model: &DownstreamModel,
    features: &[Array2<f64>],
    examples: &[DownstreamExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    let correct: usize = examples
        .par_chunks(64)
        .map(|chunk| {
            model
                .predict(features, chunk)
                .map(|p| p.iter().zip(chunk).filter(|(p, e)| **p == e.label).count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedDownstream {
    pub model: DownstreamModel,
    pub history: Vec<DownstreamEpoch>,
    pub best_epoch: usize,
}

/// Adam on softmax cross entropy with early stopping on validation accuracy
/// (training accuracy when there is no validation split). Stops once
/// accuracy has not improved for more than `patience` epochs; returns the
/// model of the first best epoch.
pub fn train_downstream(
    dataset: &DownstreamDataset,
    config: &DownstreamConfig,
    seed: u64,
) -> Result<TrainedDownstream> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Invalid("empty downstream training split".into()));
    }
    if dataset.num_classes == 0 {
        return Err(Error::Invalid("downstream task has no classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DownstreamModel::new(
        dataset.dim(),
        config.hidden_for(dataset.kind),
        dataset.num_classes,
        config.max_len,
        config.aggregation,
        &mut rng,
    );
    let adam = AdamConfig {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::for_params(&model.params());
    let monitor = if dataset.val.is_empty() {
        &dataset.train
    } else {
        &dataset.val
    };
    let mut order = dataset.train.clone();
    let mut history = Vec::new();
    let mut best = (-1.0, 0, model.clone());
    let mut wait = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (loss, grads) = model.loss_and_grads(&dataset.features, chunk)?;
            loss_sum += loss * chunk.len() as f64;
            let grads: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(&mut model.params_mut(), &grads, &mut state, &adam);
        }
        let val_accuracy = evaluate(&model, &dataset.features, monitor)?;
        history.push(DownstreamEpoch {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, model.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait > config.patience {
                break;
            }
        }
    }
    Ok(TrainedDownstream {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub accuracy: f64,
    pub n_test: usize,
    pub seed: u64,
    pub feature_source: String,
    pub config_hash: Option<String>,
}

/// Builds the splits, trains and scores one task with one feature source.
pub fn run_downstream(
    corpus: &SegmentCorpus,
    annotations: &Annotations,
    source: &FeatureSource,
    kind: TaskKind,
    config: &DownstreamConfig,
    seed: u64,
) -> Result<(EvalReport, TrainedDownstream)> {
    let dataset = build_downstream_dataset(corpus, annotations, source, kind, config, seed)?;
    let trained = train_downstream(&dataset, config, seed)?;
    let accuracy = evaluate(&trained.model, &dataset.features, &dataset.test)?;
    Ok((
        EvalReport {
            task: kind,
            accuracy,
            n_test: dataset.test.len(),
            seed,
            feature_source: source.name().into(),
            config_hash: None,
        },
        trained,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn model(d: usize, h: usize, c: usize, agg: Aggregation) -> DownstreamModel {
        DownstreamModel::new(d, h, c, 4, agg, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn ex(video: usize, start: usize, end: usize, label: usize) -> DownstreamExample {
        DownstreamExample {
            video,
            start,
            end,
            label,
        }
    }

    #[test]
    fn example_cardinalities() {
        let ann = VideoAnnotation {
            video_id: "v".into(),
            task: 2,
            steps: vec![
                StepSpan {
                    step: 5,
                    start: 0,
                    end: 3,
                },
                StepSpan {
                    step: 6,
                    start: 3,
                    end: 5,
                },
                StepSpan {
                    step: 7,
                    start: 5,
                    end: 6,
                },
                StepSpan {
                    step: 8,
                    start: 6,
                    end: 9,
                },
            ],
        };
        assert_eq!(
            video_examples(TaskKind::TaskRecognition, 0, &ann, 9),
            vec![ex(0, 0, 9, 2)]
        );
        assert_eq!(
            video_examples(TaskKind::StepRecognition, 0, &ann, 9).len(),
            4
        );
        let sf = video_examples(TaskKind::StepForecasting, 0, &ann, 9);
        assert_eq!(sf[0], ex(0, 0, 3, 6));
        assert_eq!(sf.len(), 3);
    }

    #[test]
    fn zero_inputs_reach_only_bias_path() {
        let mut m = model(3, 4, 2, Aggregation::Mean);
        m.classifier.layers[0].bias = array![1.0, -1.0, 0.5, 0.0];
        m.classifier.layers[1].bias = array![0.25, -0.25];
        let feats = vec![Array2::zeros((2, 3))];
        let logits = m.forward(&feats, &[ex(0, 0, 2, 0)]).unwrap();
        let w2 = &m.classifier.layers[1].weight;
        let h = array![1.0, 0.0, 0.5, 0.0];
        let expect = h.dot(w2) + &array![0.25, -0.25];
        assert!((&logits.row(0) - &expect).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn hand_computed_length_two() {
        let mut m = model(2, 2, 2, Aggregation::Mean);
        m.positions[[0, 0]] = 1.0;
        m.positions[[1, 1]] = 2.0;
        m.classifier.layers[0].weight = array![[1.0, 0.0], [0.0, 1.0]];
        m.classifier.layers[0].bias = array![0.0, -1.0];
        m.classifier.layers[1].weight = array![[1.0, -1.0], [2.0, 0.0]];
        m.classifier.layers[1].bias = array![0.0, 0.0];
        let feats = vec![array![[1.0, 1.0], [3.0, -1.0]]];
        // mean of (2, 1) and (3, 1) = (2.5, 1); hidden relu(2.5, 0) = (2.5, 0)
        let logits = m.forward(&feats, &[ex(0, 0, 2, 0)]).unwrap();
        assert_eq!(logits, array![[2.5, -2.5]]);
        m.aggregation = Aggregation::Sum;
        // sum = (5, 2); hidden relu(5, 1) = (5, 1); logits (7, -5)
        assert_eq!(
            m.forward(&feats, &[ex(0, 0, 2, 0)]).unwrap(),
            array![[7.0, -5.0]]
        );
    }

    #[test]
    fn overlong_sequence_rejected() {
        let m = model(1, 2, 2, Aggregation::Mean);
        let feats = vec![Array2::zeros((6, 1))];
        assert!(m.forward(&feats, &[ex(0, 0, 5, 0)]).is_err());
    }

    #[test]
    fn accuracy_arithmetic() {
        let mut m = model(1, 1, 2, Aggregation::Sum);
        // logits = (0, x): class 1 iff x > 0, ties go to class 0
        m.classifier.layers[0].weight = array![[1.0]];
        m.classifier.layers[0].bias = array![0.0];
        m.classifier.layers[1].weight = array![[0.0, 1.0]];
        m.classifier.layers[1].bias = array![0.0, 0.0];
        let feats = vec![array![[1.0], [-1.0], [2.0], [0.0]]];
        let all = [
            ex(0, 0, 1, 1),
            ex(0, 1, 2, 0),
            ex(0, 2, 3, 1),
            ex(0, 3, 4, 0),
        ];
        assert_eq!(evaluate(&m, &feats, &all).unwrap(), 1.0);
        let none: Vec<_> = all
            .iter()
            .map(|e| ex(0, e.start, e.end, 1 - e.label))
            .collect();
        assert_eq!(evaluate(&m, &feats, &none).unwrap(), 0.0);
        let mut three = all.to_vec();
        three[3].label = 1;
        assert_eq!(evaluate(&m, &feats, &three).unwrap(), 0.75);
        assert!(evaluate(&m, &feats, &[]).is_err());
    }

    #[test]
    fn positional_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = DownstreamModel::new(3, 5, 3, 4, Aggregation::Mean, &mut rng);
        m.positions.mapv_inplace(|_| 0.0);
        m.positions[[1, 2]] = 0.3;
        for l in &mut m.classifier.layers {
            l.bias.mapv_inplace(|_| 0.1);
        }
        let feats = vec![array![[0.5, -1.0, 2.0], [1.0, 0.0, -0.5], [0.2, 0.2, 0.2]]];
        let batch = [ex(0, 0, 3, 2), ex(0, 1, 3, 0)];
        let (_, grads) = m.loss_and_grads(&feats, &batch).unwrap();
        let loss = |m: &DownstreamModel| m.loss_and_grads(&feats, &batch).unwrap().0;
        let h = 1e-6;
        for idx in [(0, 0), (1, 2), (2, 1)] {
            let mut p = m.clone();
            p.positions[idx] += h;
            let mut q = m.clone();
            q.positions[idx] -= h;
            let fd = (loss(&p) - loss(&q)) / (2.0 * h);
            let a = grads[0][idx.0 * 3 + idx.1];
            assert!((fd - a).abs() < 1e-7, "{fd} vs {a}");
        }
        // unused position rows get no gradient
        assert!(grads[0][9..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn annotations_round_trip() {
        let a = Annotations::new(
            2,
            5,
            vec![VideoAnnotation {
                video_id: "v0".into(),
                task: 1,
                steps: vec![StepSpan {
                    step: 4,
                    start: 0,
                    end: 2,
                }],
            }],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        a.save(&p).unwrap();
        assert_eq!(Annotations::load(&p).unwrap(), a);
        assert!(Annotations::new(1, 5, a.videos.clone()).is_err());
    }
}
