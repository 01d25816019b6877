//! Pre-training of the feature adapter with one multi-label answer head per
//! pseudo-label objective.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointMetadata, HeadKind, HeadSpec, ModelCheckpoint, TensorShape};
use crate::corpus::SegmentCorpus;
use crate::error::{Error, Result};
use crate::labeler::{class_map, LabelFile, PseudoLabelSet};
use crate::nn::{adam_step, bce_with_logits, grad_slices, AdamConfig, AdamState, DenseGrad, Mlp};

pub const DEFAULT_BOTTLENECK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Vnm,
    VtmDb,
    VtmCorpus,
    TclDb,
    TclCorpus,
    Nrl,
    Vsm,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Vnm,
        Objective::VtmDb,
        Objective::VtmCorpus,
        Objective::TclDb,
        Objective::TclCorpus,
        Objective::Nrl,
        Objective::Vsm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Vnm => "vnm",
            Objective::VtmDb => "vtm_db",
            Objective::VtmCorpus => "vtm_corpus",
            Objective::TclDb => "tcl_db",
            Objective::TclCorpus => "tcl_corpus",
            Objective::Nrl => "nrl",
            Objective::Vsm => "vsm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objectives: Vec<Objective>,
    /// Number of NRL hops trained; each hop adds an in and an out head.
    pub nrl_hops: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of segments held out for early stopping.
    pub validation_fraction: f64,
    pub bottleneck: usize,
    /// Per-head multipliers on the loss, keyed by head name; missing = 1.
    pub loss_coefficients: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objectives: vec![
                Objective::Vnm,
                Objective::VtmDb,
                Objective::VtmCorpus,
                Objective::TclDb,
                Objective::TclCorpus,
                Objective::Nrl,
            ],
            nrl_hops: 2,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            bottleneck: DEFAULT_BOTTLENECK,
            loss_coefficients: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objectives.is_empty() {
            return Err(Error::Config("no active objectives".into()));
        }
        if self.objectives.contains(&Objective::Nrl) && self.nrl_hops == 0 {
            return Err(Error::Config("nrl objective needs nrl_hops >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.bottleneck == 0 {
            return Err(Error::Config(
                "batch size, epoch count and bottleneck must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "validation_fraction must be in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config("invalid Adam betas or epsilon".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn coefficient(&self, head: &str) -> f64 {
        self.loss_coefficients.get(head).copied().unwrap_or(1.0)
    }
}

/// Hidden widths of a head: `[C/4, C/2]` for node classes, `[C/2]` for task
/// classes, each at least 1.
pub fn head_hidden_widths(kind: HeadKind, classes: usize) -> Vec<usize> {
    match kind {
        HeadKind::NodeClasses => vec![(classes / 4).max(1), (classes / 2).max(1)],
        HeadKind::TaskClasses => vec![(classes / 2).max(1)],
    }
}

/// Heads implied by the objectives and the class lists of a label file.
pub fn head_specs(config: &TrainConfig, labels: &LabelFile) -> Result<Vec<HeadSpec>> {
    let h = &labels.header;
    let mut objectives = config.objectives.clone();
    objectives.sort();
    objectives.dedup();
    let mut specs = Vec::new();
    let mut push = |name: String, kind, classes: usize| {
        if classes == 0 {
            return Err(Error::Config(format!("head {name} has no classes")));
        }
        specs.push(HeadSpec {
            name,
            kind,
            classes,
        });
        Ok(())
    };
    for o in objectives {
        match o {
            Objective::Vnm | Objective::TclDb | Objective::TclCorpus => {
                push(o.name().into(), HeadKind::NodeClasses, h.num_nodes)?
            }
            Objective::VtmDb => push(o.name().into(), HeadKind::TaskClasses, h.db_task_ids.len())?,
            Objective::VtmCorpus => push(
                o.name().into(),
                HeadKind::TaskClasses,
                h.corpus_task_names.len(),
            )?,
            Objective::Vsm => push(o.name().into(), HeadKind::NodeClasses, h.num_headlines)?,
            Objective::Nrl => {
                if config.nrl_hops > h.nrl_hops {
                    return Err(Error::Config(format!(
                        "{} NRL hops requested but labels carry {}",
                        config.nrl_hops, h.nrl_hops
                    )));
                }
                for k in 1..=config.nrl_hops {
                    push(format!("nrl_in_{k}"), HeadKind::NodeClasses, h.num_nodes)?;
                    push(format!("nrl_out_{k}"), HeadKind::NodeClasses, h.num_nodes)?;
                }
            }
        }
    }
    Ok(specs)
}

struct ClassMaps<'a> {
    db_tasks: BTreeMap<&'a str, usize>,
    corpus_tasks: BTreeMap<&'a str, usize>,
}

fn positives(head: &HeadSpec, r: &PseudoLabelSet, maps: &ClassMaps) -> Result<Vec<u32>> {
    let ids = |v: &[(usize, f64)]| v.iter().map(|&(i, _)| i).collect::<Vec<_>>();
    let names = |v: &[String], m: &BTreeMap<&str, usize>| -> Result<Vec<usize>> {
        v.iter()
            .map(|n| {
                m.get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("unknown task {n:?} in labels")))
            })
            .collect()
    };
    let mut out = match head.name.as_str() {
        "vnm" => ids(&r.vnm),
        "vsm" => ids(&r.vsm),
        "vtm_db" => names(&r.vtm_db, &maps.db_tasks)?,
        "vtm_corpus" => names(&r.vtm_corpus, &maps.corpus_tasks)?,
        "tcl_db" => r.tcl_db.clone(),
        "tcl_corpus" => r.tcl_corpus.clone(),
        other => {
            let (dir, k) = other
                .strip_prefix("nrl_in_")
                .map(|k| ("in", k))
                .or_else(|| other.strip_prefix("nrl_out_").map(|k| ("out", k)))
                .ok_or_else(|| Error::Config(format!("unknown head {other:?}")))?;
            let k: usize = k
                .parse()
                .map_err(|_| Error::Config(format!("unknown head {other:?}")))?;
            let hops = if dir == "in" { &r.nrl.inn } else { &r.nrl.out };
            hops.get(k - 1).map(|h| ids(h)).unwrap_or_default()
        }
    };
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&c| c >= head.classes) {
        return Err(Error::Invalid(format!(
            "label/graph class-count mismatch: head {} has {} classes but labels use class {bad}",
            head.name, head.classes
        )));
    }
    Ok(out.into_iter().map(|c| c as u32).collect())
}

/// Segment features with sparse multi-label targets for every head.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    pub heads: Vec<HeadSpec>,
    /// `targets[head][sample]` = sorted positive class indices.
    pub targets: Vec<Vec<Vec<u32>>>,
}

impl TrainingSet {
    pub fn new(
        features: Array2<f64>,
        heads: Vec<HeadSpec>,
        targets: Vec<Vec<Vec<u32>>>,
    ) -> Result<Self> {
        if heads.len() != targets.len() {
            return Err(Error::Invalid(
                "one target list per head is required".into(),
            ));
        }
        for (h, t) in heads.iter().zip(&targets) {
            if t.len() != features.nrows() {
                return Err(Error::Invalid(format!(
                    "head {} has {} target rows for {} samples",
                    h.name,
                    t.len(),
                    features.nrows()
                )));
            }
            if t.iter().flatten().any(|&c| c as usize >= h.classes) {
                return Err(Error::Invalid(format!(
                    "label/graph class-count mismatch in head {}",
                    h.name
                )));
            }
        }
        Ok(Self {
            features,
            heads,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Dense 0/1 target matrices of the given samples, one per head.
    pub fn dense_targets(&self, samples: &[usize]) -> Vec<Array2<f64>> {
        self.heads
            .iter()
            .zip(&self.targets)
            .map(|(h, t)| {
                let mut y = Array2::zeros((samples.len(), h.classes));
                for (row, &s) in samples.iter().enumerate() {
                    for &c in &t[s] {
                        y[[row, c as usize]] = 1.0;
                    }
                }
                y
            })
            .collect()
    }

    pub fn feature_rows(&self, samples: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), samples)
    }
}

/// Pairs each label record with its segment's features. `corpus` must be
/// the (pooled) corpus the labels were generated from.
pub fn build_training_set(
    corpus: &SegmentCorpus,
    labels: &LabelFile,
    config: &TrainConfig,
) -> Result<TrainingSet> {
    config.validate()?;
    let heads = head_specs(config, labels)?;
    let dim = corpus
        .dim()
        .ok_or_else(|| Error::Invalid("empty corpus".into()))?;
    let videos: HashMap<&str, usize> = corpus
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| (v.video_id.as_str(), i))
        .collect();
    let maps = ClassMaps {
        db_tasks: class_map(&labels.header.db_task_ids),
        corpus_tasks: class_map(&labels.header.corpus_task_names),
    };
    let mut features = Array2::zeros((labels.records.len(), dim));
    let mut targets = vec![Vec::with_capacity(labels.records.len()); heads.len()];
    for (row, r) in labels.records.iter().enumerate() {
        let video = videos
            .get(r.video_id.as_str())
            .map(|&i| &corpus.videos[i])
            .ok_or_else(|| {
                Error::Invalid(format!("labels reference unknown video {}", r.video_id))
            })?;
        if r.segment_index >= video.num_segments() {
            return Err(Error::Invalid(format!(
                "labels reference segment {} of video {} which has {}",
                r.segment_index,
                r.video_id,
                video.num_segments()
            )));
        }
        for (x, &f) in features
            .row_mut(row)
            .iter_mut()
            .zip(video.features.row(r.segment_index))
        {
            *x = f as f64;
        }
        for (h, head) in heads.iter().enumerate() {
            targets[h].push(positives(head, r, &maps)?);
        }
    }
    TrainingSet::new(features, heads, targets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerHead {
    pub spec: HeadSpec,
    pub mlp: Mlp,
}

/// Adapter `d -> bottleneck -> d` plus unshared answer heads on its output.
#[derive(Debug, Clone, PartialEq)]
pub struct PaprikaModel {
    pub adapter: Mlp,
    pub heads: Vec<AnswerHead>,
}

/// Gradients in the same order as [`PaprikaModel::params_mut`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub adapter: Vec<DenseGrad>,
    pub heads: Vec<Vec<DenseGrad>>,
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = grad_slices(&self.adapter);
        for h in &self.heads {
            out.extend(grad_slices(h));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_head: Vec<f64>,
}

impl PaprikaModel {
    pub fn new(dim: usize, bottleneck: usize, heads: Vec<HeadSpec>, rng: &mut impl Rng) -> Self {
        let adapter = Mlp::glorot(&[dim, bottleneck, dim], rng);
        let heads = heads
            .into_iter()
            .map(|spec| {
                let mut widths = vec![dim];
                widths.extend(head_hidden_widths(spec.kind, spec.classes));
                widths.push(spec.classes);
                AnswerHead {
                    mlp: Mlp::glorot(&widths, rng),
                    spec,
                }
            })
            .collect();
        Self { adapter, heads }
    }

    pub fn dim(&self) -> usize {
        self.adapter.input_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.adapter.layers[0].outputs()
    }

    /// Refined features `z = W2 relu(W1 x + b1) + b2`, one row per sample.
    pub fn adapt(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(self.adapter.forward(x))
    }

    /// Weighted sum of per-head mean BCE losses and its gradients.
    pub fn loss_and_grads(
        &self,
        x: &Array2<f64>,
        targets: &[Array2<f64>],
        coefficients: &[f64],
    ) -> (LossBreakdown, ModelGrads) {
        let (z, adapter_cache) = self.adapter.forward_cached(x);
        let mut dz = Array2::zeros(z.dim());
        let mut per_head = Vec::with_capacity(self.heads.len());
        let mut head_grads = Vec::with_capacity(self.heads.len());
        let mut total = 0.0;
        for ((head, y), &c) in self.heads.iter().zip(targets).zip(coefficients) {
            let (logits, cache) = head.mlp.forward_cached(&z);
            let (loss, mut dlogits) = bce_with_logits(&logits, y);
            dlogits *= c;
            let (g, dzh) = head.mlp.backward(&cache, &dlogits);
            dz += &dzh;
            total += c * loss;
            per_head.push(loss);
            head_grads.push(g);
        }
        let (adapter_grads, _) = self.adapter.backward(&adapter_cache, &dz);
        (
            LossBreakdown { total, per_head },
            ModelGrads {
                adapter: adapter_grads,
                heads: head_grads,
            },
        )
    }

    pub fn loss(&self, x: &Array2<f64>, targets: &[Array2<f64>], coefficients: &[f64]) -> f64 {
        let z = self.adapter.forward(x);
        self.heads
            .iter()
            .zip(targets)
            .zip(coefficients)
            .map(|((h, y), &c)| c * bce_with_logits(&h.mlp.forward(&z), y).0)
            .sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = self.adapter.params();
        for h in &self.heads {
            out.extend(h.mlp.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.adapter.params_mut();
        for h in &mut self.heads {
            out.extend(h.mlp.params_mut());
        }
        out
    }

    fn tensor_shapes(&self) -> Vec<TensorShape> {
        let mut shapes = Vec::new();
        let mut add = |prefix: &str, mlp: &Mlp| {
            for (i, l) in mlp.layers.iter().enumerate() {
                shapes.push(TensorShape {
                    name: format!("{prefix}.{i}.weight"),
                    rows: l.inputs(),
                    cols: l.outputs(),
                });
                shapes.push(TensorShape {
                    name: format!("{prefix}.{i}.bias"),
                    rows: 1,
                    cols: l.outputs(),
                });
            }
        };
        add("adapter", &self.adapter);
        for h in &self.heads {
            add(&format!("head.{}", h.spec.name), &h.mlp);
        }
        shapes
    }

    pub fn to_checkpoint(&self, seed: u64, config_hash: Option<String>) -> ModelCheckpoint {
        let weights = self
            .params()
            .into_iter()
            .flatten()
            .map(|&w| w as f32)
            .collect();
        ModelCheckpoint::new(
            self.tensor_shapes(),
            weights,
            CheckpointMetadata {
                dim: self.dim(),
                bottleneck: self.bottleneck(),
                heads: self.heads.iter().map(|h| h.spec.clone()).collect(),
                seed,
                config_hash,
            },
        )
        .expect("shape table matches parameters")
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let m = &ckpt.metadata;
        let mut model = Self {
            adapter: Mlp::zeros(&[m.dim, m.bottleneck, m.dim]),
            heads: m
                .heads
                .iter()
                .map(|spec| {
                    let mut widths = vec![m.dim];
                    widths.extend(head_hidden_widths(spec.kind, spec.classes));
                    widths.push(spec.classes);
                    AnswerHead {
                        spec: spec.clone(),
                        mlp: Mlp::zeros(&widths),
                    }
                })
                .collect(),
        };
        if model.tensor_shapes() != ckpt.shapes {
            return Err(Error::Invalid(
                "checkpoint tensor table does not match its metadata".into(),
            ));
        }
        for (dst, (_, src)) in model.params_mut().into_iter().zip(ckpt.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as f64;
            }
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch (before each update).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best epoch.
    pub model: PaprikaModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: u64,
}

fn eval_loss(
    model: &PaprikaModel,
    set: &TrainingSet,
    samples: &[usize],
    batch: usize,
    coef: &[f64],
) -> f64 {
    let mut sum = 0.0;
    for chunk in samples.chunks(batch) {
        let x = set.feature_rows(chunk);
        sum += model.loss(&x, &set.dense_targets(chunk), coef) * chunk.len() as f64;
    }
    sum / samples.len() as f64
}

/// Splits sample indices into (train, validation) with a seeded draw.
pub fn validation_split(n: usize, fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64) * fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let mut val = index::sample(rng, n, n_val).into_vec();
    val.sort_unstable();
    let mut is_val = vec![false; n];
    for &v in &val {
        is_val[v] = true;
    }
    let train = (0..n).filter(|&i| !is_val[i]).collect();
    (train, val)
}

/// Mini-batch Adam on the summed head losses with early stopping.
///
/// The monitored quantity is the validation loss, or the epoch training loss
/// when the validation share is empty. Training stops once it has failed to
/// improve for more than `patience` consecutive epochs, and the parameters
/// of the best epoch are returned.
pub fn train(set: &TrainingSet, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PaprikaModel::new(set.dim(), config.bottleneck, set.heads.clone(), &mut rng);
    let coef: Vec<f64> = set
        .heads
        .iter()
        .map(|h| config.coefficient(&h.name))
        .collect();
    let (mut order, val) = validation_split(set.len(), config.validation_fraction, &mut rng);
    let adam = config.adam();
    let mut state = AdamState::for_params(&model.params());

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut wait = 0;
    let mut steps = 0u64;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = set.feature_rows(chunk);
            let y = set.dense_targets(chunk);
            let (loss, grads) = model.loss_and_grads(&x, &y, &coef);
            loss_sum += loss.total * chunk.len() as f64;
            adam_step(&mut model.params_mut(), &grads.slices(), &mut state, &adam);
            steps += 1;
        }
        let train_loss = loss_sum / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Domain(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        let val_loss =
            (!val.is_empty()).then(|| eval_loss(&model, set, &val, config.batch_size, &coef));
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, model.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait > config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        steps,
    })
}

/// Largest relative difference between analytic gradients and central
/// finite differences (step `h`) over a seeded sample of `coords` parameter
/// coordinates (all of them if the model has fewer).
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    model: &PaprikaModel,
    x: &Array2<f64>,
    targets: &[Array2<f64>],
    h: f64,
    coords: usize,
    seed: u64,
) -> f64 {
    let coef = vec![1.0; model.heads.len()];
    let (_, grads) = model.loss_and_grads(x, targets, &coef);
    let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();
    let mut locations = Vec::with_capacity(analytic.len());
    for (t, p) in model.params().iter().enumerate() {
        locations.extend((0..p.len()).map(|i| (t, i)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = if coords >= locations.len() {
        (0..locations.len()).collect::<Vec<_>>()
    } else {
        index::sample(&mut rng, locations.len(), coords).into_vec()
    };
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for k in picked {
        let (t, i) = locations[k];
        let orig = probe.params()[t][i];
        probe.params_mut()[t][i] = orig + h;
        let plus = probe.loss(x, targets, &coef);
        probe.params_mut()[t][i] = orig - h;
        let minus = probe.loss(x, targets, &coef);
        probe.params_mut()[t][i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
