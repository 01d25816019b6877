//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints one PASS/FAIL line; exits nonzero if any check fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use pkgforge::checkpoint::{CheckpointMetadata, HeadKind, HeadSpec, ModelCheckpoint, TensorShape};
use pkgforge::config::PipelineConfig;
use pkgforge::corpus::{FeatureMatrix, SegmentCorpus, StepDatabase, StepHeadline, Task, Video};
use pkgforge::dedup::cluster_headlines;
use pkgforge::downstream::{run_downstream, FeatureSource, TaskKind};
use pkgforge::graph::{
    aggregate_transitions, build_graph, khop_neighbors, match_corpus, normalize_scores,
    DirectedEdge, Direction, EdgeSource, MemberRef, ProceduralKnowledgeGraph, StepNode,
};
use pkgforge::labeler::{
    emit_labels, LabelFile, LabelHeader, NrlLabels, PseudoLabelSet, LABEL_FORMAT, LABEL_VERSION,
};
use pkgforge::matcher::Matcher;
use pkgforge::synth::{generate, graph_recovery_metrics, NoisePreset};
use pkgforge::trainer::{
    build_training_set, train, Objective, PaprikaModel, TrainConfig, TrainingSet,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

// 1 ------------------------------------------------------------------------

fn bfs_components(embs: &[Vec<f64>], threshold: f64) -> BTreeSet<BTreeSet<usize>> {
    let n = embs.len();
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = BTreeSet::from([s]);
        let mut queue = vec![s];
        while let Some(u) = queue.pop() {
            for v in 0..n {
                if !seen[v] && 1.0 - cosine(&embs[u], &embs[v]) < threshold {
                    seen[v] = true;
                    comp.insert(v);
                    queue.push(v);
                }
            }
        }
        out.insert(comp);
    }
    out
}

fn clustering_oracle() -> Check {
    let t = Instant::now();
    let mut merged_sets = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=64);
        let d = rng.gen_range(2..=16);
        // a few anchors with jittered copies so that components are nontrivial
        let anchors: Vec<Vec<f64>> = (0..rng.gen_range(1..=n))
            .map(|_| unit_vec(&mut rng, d))
            .collect();
        let embs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a = &anchors[rng.gen_range(0..anchors.len())];
                let jitter = rng.gen_range(0.0..0.6);
                a.iter()
                    .map(|x| x + jitter * rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let got: BTreeSet<BTreeSet<usize>> = cluster_headlines(&embs, 0.09)
            .map_err(|e| e.to_string())?
            .all_members()
            .iter()
            .map(|m| m.iter().copied().collect())
            .collect();
        let want = bfs_components(&embs, 0.09);
        merged_sets += usize::from(want.len() < n);
        ensure(got == want, || format!("seed {seed}: partitions differ"))?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!(
        "100/100 partitions exact ({merged_sets} with merges), {secs:.2} s"
    ))
}

// 2 ------------------------------------------------------------------------

fn edge_scoring_oracle() -> Check {
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d = rng.gen_range(3..=8);
        let tasks: Vec<Task> = (0..rng.gen_range(1..=3))
            .map(|t| Task {
                task_id: format!("t{t}"),
                task_name: format!("task {t}"),
                steps: (0..rng.gen_range(1..=4))
                    .map(|s| StepHeadline {
                        headline: format!("s{t}.{s}"),
                        embedding: unit_vec(&mut rng, d)
                            .iter()
                            .map(|&x| (3.6 * x) as f32)
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        let db = StepDatabase::new(tasks).map_err(|e| e.to_string())?;
        let heads: Vec<Vec<f64>> = db.embeddings_f64();
        let videos: Vec<Video> = (0..rng.gen_range(0..=10))
            .map(|v| {
                let n = rng.gen_range(0..=8);
                let rows: Vec<Vec<f32>> = (0..n)
                    .map(|_| {
                        let h = &heads[rng.gen_range(0..heads.len())];
                        h.iter()
                            .map(|&x| (x + rng.gen_range(-1.0..1.0)) as f32)
                            .collect()
                    })
                    .collect();
                Video {
                    video_id: format!("v{v}"),
                    task_name: None,
                    features: FeatureMatrix::from_rows(&rows, d).unwrap(),
                }
            })
            .collect();
        let corpus = SegmentCorpus::new(videos).map_err(|e| e.to_string())?;

        let matches = match_corpus(&corpus, &Matcher::new(&db), 10.0).map_err(|e| e.to_string())?;
        let got = aggregate_transitions(&matches);

        let mut want: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for v in &corpus.videos {
            let matched: Vec<Vec<(usize, f64)>> = (0..v.num_segments())
                .map(|i| {
                    let seg: Vec<f64> = v.features.row(i).iter().map(|&x| f64::from(x)).collect();
                    heads
                        .iter()
                        .enumerate()
                        .map(|(h, e)| (h, e.iter().zip(&seg).map(|(a, b)| a * b).sum::<f64>()))
                        .filter(|&(_, s)| s > 10.0)
                        .collect()
                })
                .collect();
            for i in 1..matched.len() {
                for &(a, sa) in &matched[i - 1] {
                    for &(b, sb) in &matched[i] {
                        if a != b {
                            *want.entry((a, b)).or_default() += sa * sb;
                        }
                    }
                }
            }
        }
        ensure(got.keys().eq(want.keys()), || {
            format!("seed {seed}: pair sets differ")
        })?;
        for (k, v) in &got {
            worst = worst.max((v - want[k]).abs());
        }
        pairs += got.len();
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "50/50 corpora, {pairs} pairs, max deviation {worst:.1e}"
    ))
}

// 3 ------------------------------------------------------------------------

fn normalization_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let n = rng.gen_range(1..=40);
        let distinct = rng.gen_range(1..=n);
        let pool: Vec<f64> = (0..distinct)
            .map(|_| 10f64.powf(rng.gen_range(-3.0..6.0)))
            .collect();
        let scores: BTreeMap<usize, f64> = (0..n)
            .map(|i| (i, pool[rng.gen_range(0..distinct)]))
            .collect();
        let norm = normalize_scores(&scores).map_err(|e| e.to_string())?;
        let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
        for (k, &s) in &scores {
            let v = norm[k];
            ensure((0.0..=1.0).contains(&v), || {
                format!("case {case}: {v} outside [0,1]")
            })?;
            if lo == hi {
                ensure(v == 1.0, || {
                    format!("case {case}: single value maps to {v}")
                })?;
            } else if s == lo {
                ensure(v == 0.0, || format!("case {case}: min maps to {v}"))?;
            } else if s == hi {
                ensure(v == 1.0, || format!("case {case}: max maps to {v}"))?;
            }
        }
        if lo < hi {
            for (a, &sa) in &scores {
                for (b, &sb) in &scores {
                    ensure(sa >= sb || norm[a] < norm[b], || {
                        format!("case {case}: order broken")
                    })?;
                }
            }
        }
    }
    Ok("1000/1000 inputs".into())
}

// 4 ------------------------------------------------------------------------

fn dfs_best(
    at: usize,
    left: usize,
    prod: f64,
    adj: &[Vec<(usize, f64)>],
    best: &mut BTreeMap<usize, f64>,
) {
    if left == 0 {
        let e = best.entry(at).or_insert(prod);
        *e = e.max(prod);
        return;
    }
    for &(next, s) in &adj[at] {
        dfs_best(next, left - 1, prod * s, adj, best);
    }
}

fn nrl_oracle() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let n = rng.gen_range(2..=25);
        let density = rng.gen_range(0.0..=0.3);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.gen_bool(density) {
                    edges.push((a, b, 1.0 - rng.gen_range(0.0..1.0)));
                }
            }
        }
        let nodes = (0..n)
            .map(|i| StepNode {
                node_id: i,
                members: vec![],
                task_names: vec![],
            })
            .collect();
        let g = ProceduralKnowledgeGraph::from_parts(
            nodes,
            edges
                .iter()
                .map(|&(src, dst, score)| DirectedEdge {
                    src,
                    dst,
                    score,
                    sources: vec![EdgeSource::Corpus],
                })
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let seeds: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.2)).collect();
        let k = rng.gen_range(1..=3);
        for dir in [Direction::Out, Direction::In] {
            let mut adj = vec![Vec::new(); n];
            for &(a, b, s) in &edges {
                match dir {
                    Direction::Out => adj[a].push((b, s)),
                    Direction::In => adj[b].push((a, s)),
                }
            }
            let got = khop_neighbors(&g, &seeds, k, dir);
            for (hop, level) in got.iter().enumerate() {
                let mut want = BTreeMap::new();
                for &s in &seeds {
                    dfs_best(s, hop + 1, 1.0, &adj, &mut want);
                }
                ensure(level.keys().eq(want.keys()), || {
                    format!("seed {seed} {dir:?} hop {}: node sets differ", hop + 1)
                })?;
                for (node, c) in level {
                    worst = worst.max((c - want[node]).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "100/100 graphs, both directions, max deviation {worst:.1e}"
    ))
}

// 5 ------------------------------------------------------------------------

fn gradient_check() -> Check {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut kinds_seen = BTreeSet::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let dim = rng.gen_range(2..=8);
        let bottleneck = rng.gen_range(1..=8);
        let mut heads = vec![
            HeadSpec {
                name: "node".into(),
                kind: HeadKind::NodeClasses,
                classes: rng.gen_range(1..=12),
            },
            HeadSpec {
                name: "task".into(),
                kind: HeadKind::TaskClasses,
                classes: rng.gen_range(1..=12),
            },
        ];
        if rng.gen_bool(0.5) {
            heads.push(HeadSpec {
                name: "extra".into(),
                kind: HeadKind::NodeClasses,
                classes: rng.gen_range(4..=16),
            });
        }
        kinds_seen.extend(heads.iter().map(|h| h.kind));
        let mut model = PaprikaModel::new(dim, bottleneck, heads.clone(), &mut rng);
        for p in model.params_mut() {
            p.iter_mut().for_each(|w| *w += rng.gen_range(-0.5..0.5));
        }
        let batch = rng.gen_range(1..=5);
        let x = Array2::from_shape_simple_fn((batch, dim), || rng.gen_range(-2.0..2.0));
        let y: Vec<Array2<f64>> = heads
            .iter()
            .map(|h| {
                Array2::from_shape_simple_fn((batch, h.classes), || {
                    f64::from(u8::from(rng.gen_bool(0.3)))
                })
            })
            .collect();
        let coef = vec![1.0; heads.len()];
        let (_, grads) = model.loss_and_grads(&x, &y, &coef);
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();
        let mut probe = model.clone();
        let mut k = 0;
        for t in 0..model.params().len() {
            for i in 0..model.params()[t].len() {
                let orig = probe.params()[t][i];
                probe.params_mut()[t][i] = orig + h;
                let plus = probe.loss(&x, &y, &coef);
                probe.params_mut()[t][i] = orig - h;
                let minus = probe.loss(&x, &y, &coef);
                probe.params_mut()[t][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[k];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
                k += 1;
            }
        }
        ensure(k == analytic.len(), || "gradient count mismatch".into())?;
    }
    ensure(kinds_seen.len() == 2, || {
        "not every head kind covered".into()
    })?;
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!(
        "20/20 configurations, max relative error {worst:.2e}"
    ))
}

// 6 ------------------------------------------------------------------------

fn overfit_sanity() -> Check {
    let mut config = PipelineConfig::synthetic();
    config.world.n_videos = 20;
    let world = generate(&config.world_config()).map_err(|e| e.to_string())?;
    let (graph, _) =
        build_graph(&world.database, &world.corpus, &config.graph).map_err(|e| e.to_string())?;
    let labels = emit_labels(&world.corpus, &world.database, &graph, &config.labels, None)
        .map_err(|e| e.to_string())?;
    let one = LabelFile {
        header: labels.header.clone(),
        records: labels.records[..1].to_vec(),
    };
    let train_config = TrainConfig {
        max_epochs: 2000,
        ..TrainConfig::default()
    };
    let set = build_training_set(&world.corpus, &one, &train_config).map_err(|e| e.to_string())?;
    let out = train(&set, &train_config, 0).map_err(|e| e.to_string())?;
    let loss = out.model.loss(
        &set.features,
        &set.dense_targets(&[0]),
        &vec![1.0; set.heads.len()],
    );
    ensure(out.steps <= 2000, || format!("{} steps", out.steps))?;
    ensure(loss < 0.01, || {
        format!("final loss {loss:.4} after {} steps", out.steps)
    })?;
    let reached = out
        .history
        .iter()
        .find(|r| r.train_loss < 0.01)
        .map_or(out.steps as usize, |r| r.epoch);
    Ok(format!(
        "loss {loss:.5} over {} heads, below 0.01 by step {reached}",
        set.heads.len()
    ))
}

// 7 ------------------------------------------------------------------------

fn graph_recovery() -> Check {
    let mut passed = 0;
    let mut lines = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 0..5u64 {
        let t = Instant::now();
        let mut config = PipelineConfig::synthetic();
        config.seed = seed;
        config.world.noise_sigma = NoisePreset::Low.sigma();
        let world = generate(&config.world_config()).map_err(|e| e.to_string())?;
        let (graph, _) = build_graph(&world.database, &world.corpus, &config.graph)
            .map_err(|e| e.to_string())?;
        let support = world
            .truth
            .implied_min_support(config.graph.instance_threshold);
        let m = graph_recovery_metrics(&graph, &world.truth, support).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let ok = m.edge_recall >= 0.90 && m.edge_precision >= 0.90 && m.node_purity >= 0.95;
        passed += usize::from(ok);
        lines.push(format!(
            "s{seed}: P {:.3} R {:.3} purity {:.3}",
            m.edge_precision, m.edge_recall, m.node_purity
        ));

        config.world.noise_sigma = NoisePreset::Zero.sigma();
        let world = generate(&config.world_config()).map_err(|e| e.to_string())?;
        let (graph, _) = build_graph(&world.database, &world.corpus, &config.graph)
            .map_err(|e| e.to_string())?;
        let m = graph_recovery_metrics(&graph, &world.truth, support).map_err(|e| e.to_string())?;
        ensure(m.edge_recall == 1.0 && m.node_purity == 1.0, || {
            format!(
                "seed {seed} zero noise: recall {} purity {}",
                m.edge_recall, m.node_purity
            )
        })?;
    }
    let summary = format!(
        "{passed}/5 seeds [{}], zero-noise exact, slowest run {slowest:.2} s",
        lines.join("; ")
    );
    ensure(passed >= 4 && slowest < 120.0, || summary.clone())?;
    Ok(summary)
}

// 8 ------------------------------------------------------------------------

fn representation_gain() -> Check {
    let mut adapter_wins = 0;
    let mut ordering_holds = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let mut config = PipelineConfig::synthetic();
        config.seed = seed;
        let world = generate(&config.world_config()).map_err(|e| e.to_string())?;
        let (graph, _) = build_graph(&world.database, &world.corpus, &config.graph)
            .map_err(|e| e.to_string())?;
        let labels = emit_labels(&world.corpus, &world.database, &graph, &config.labels, None)
            .map_err(|e| e.to_string())?;
        let ann = world.truth.annotations();
        let sr = |source: &FeatureSource| {
            run_downstream(
                &world.corpus,
                &ann,
                source,
                TaskKind::StepRecognition,
                &config.downstream,
                seed,
            )
            .map(|(r, _)| r.accuracy)
            .map_err(|e| e.to_string())
        };
        let pretrained = |objectives: Vec<Objective>| -> Result<FeatureSource, String> {
            let tc = TrainConfig {
                objectives,
                ..config.train.clone()
            };
            let set: TrainingSet =
                build_training_set(&world.corpus, &labels, &tc).map_err(|e| e.to_string())?;
            let out = train(&set, &tc, seed).map_err(|e| e.to_string())?;
            Ok(FeatureSource::Adapter(Box::new(out.model)))
        };
        let raw = sr(&FeatureSource::Raw)?;
        let all = sr(&pretrained(config.train.objectives.clone())?)?;
        let vnm = sr(&pretrained(vec![Objective::Vnm])?)?;
        adapter_wins += usize::from(all > raw);
        ordering_holds += usize::from(all >= vnm);
        lines.push(format!("s{seed}: raw {raw:.3} all {all:.3} vnm {vnm:.3}"));
    }
    let summary = format!(
        "adapter > raw on {adapter_wins}/5, all >= vnm-only on {ordering_holds}/5 [{}]",
        lines.join("; ")
    );
    ensure(adapter_wins >= 4 && ordering_holds >= 3, || summary.clone())?;
    Ok(summary)
}

// 9 ------------------------------------------------------------------------

fn dir_digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&p).unwrap())));
            }
        }
    }
    out
}

fn pkgforge(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pkgforge"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn run_cli_pipeline(dir: &Path, threads: &str) -> Result<BTreeMap<String, String>, String> {
    let w = dir.join("world");
    let p = |name: &str| dir.join(name).display().to_string();
    let ws = w.display().to_string();
    pkgforge(&[
        "synth",
        "--seed",
        "7",
        "--n-videos",
        "40",
        "--n-tasks",
        "6",
        "--threads",
        threads,
        "--out",
        &ws,
    ])?;
    pkgforge(&[
        "build-graph",
        "--world",
        &ws,
        "--threads",
        threads,
        "--out",
        &p("graph.json"),
    ])?;
    pkgforge(&[
        "graph-stats",
        "--graph",
        &p("graph.json"),
        "--dot",
        &p("graph.dot"),
        "--center",
        "0,1",
        "--threads",
        threads,
        "--out",
        &p("stats.json"),
    ])?;
    pkgforge(&[
        "labels",
        "--world",
        &ws,
        "--graph",
        &p("graph.json"),
        "--threads",
        threads,
        "--out",
        &p("labels.jsonl"),
    ])?;
    pkgforge(&[
        "pretrain",
        "--world",
        &ws,
        "--labels",
        &p("labels.jsonl"),
        "--max-epochs",
        "3",
        "--threads",
        threads,
        "--out",
        &p("model.ckpt"),
    ])?;
    // pretrain overrode max_epochs, so the checkpoint hash differs from the world config
    pkgforge(&[
        "eval",
        "--world",
        &ws,
        "--checkpoint",
        &p("model.ckpt"),
        "--task",
        "SR,TR",
        "--force",
        "--threads",
        threads,
        "--out",
        &p("eval.json"),
    ])?;
    Ok(dir_digests(dir))
}

fn cli_determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = tempfile::tempdir().map_err(|e| e.to_string())?;
    let one = run_cli_pipeline(a.path(), "1")?;
    let two = run_cli_pipeline(b.path(), "2")?;
    let again = run_cli_pipeline(c.path(), "1")?;
    ensure(one.len() > 10, || {
        format!("only {} files produced", one.len())
    })?;
    for (name, digest) in &one {
        ensure(two.get(name) == Some(digest), || {
            format!("{name} differs between 1 and 2 threads")
        })?;
        ensure(again.get(name) == Some(digest), || {
            format!("{name} differs between reruns")
        })?;
    }
    ensure(one.len() == two.len(), || "file sets differ".into())?;
    Ok(format!(
        "{} files byte-identical across 3 runs (1, 2, 1 threads)",
        one.len()
    ))
}

// 10 -----------------------------------------------------------------------

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    match rng.gen_range(0..6) {
        0 => 0.0,
        1 => f32::MIN_POSITIVE * rng.gen_range(1.0..4.0),
        2 => rng.gen_range(-1e6..1e6),
        _ => rng.gen_range(-3.0..3.0),
    }
}

fn random_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => 1.0,
        1 => rng.gen_range(0.0..1e-12),
        _ => rng.gen::<f64>(),
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[&str] = &["a", "b", "z", " ", "\"", "\\", "é", "步", "\n", "\t", "-"];
    (0..rng.gen_range(1..10))
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

fn random_database(rng: &mut ChaCha8Rng) -> StepDatabase {
    let d = rng.gen_range(1..6);
    let tasks = (0..rng.gen_range(0..4))
        .map(|t| Task {
            task_id: format!("{}{t}", random_text(rng)),
            task_name: random_text(rng),
            steps: (0..rng.gen_range(1..4))
                .map(|_| StepHeadline {
                    headline: random_text(rng),
                    embedding: (0..d)
                        .map(|i| if i == 0 { 1.5 } else { random_f32(rng) })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    StepDatabase::new(tasks).unwrap()
}

fn random_corpus(rng: &mut ChaCha8Rng) -> SegmentCorpus {
    let d = rng.gen_range(1..6);
    let videos = (0..rng.gen_range(0..5))
        .map(|v| {
            let rows = rng.gen_range(0..6);
            let data = (0..rows * d).map(|_| random_f32(rng)).collect();
            Video {
                video_id: format!("{}{v}", random_text(rng)),
                task_name: rng.gen_bool(0.5).then(|| random_text(rng)),
                features: FeatureMatrix::new(rows, d, data).unwrap(),
            }
        })
        .collect();
    SegmentCorpus::new(videos).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng) -> ProceduralKnowledgeGraph {
    let n = rng.gen_range(1..8);
    let nodes = (0..n)
        .map(|i| StepNode {
            node_id: i,
            members: (0..rng.gen_range(1..3))
                .map(|_| MemberRef {
                    task_id: random_text(rng),
                    step_index: rng.gen_range(0..9),
                    headline: random_text(rng),
                })
                .collect(),
            task_names: vec![random_text(rng)],
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.gen_bool(0.3) {
                let sources = match rng.gen_range(0..3) {
                    0 => vec![EdgeSource::Corpus],
                    1 => vec![EdgeSource::Database],
                    _ => vec![EdgeSource::Corpus, EdgeSource::Database],
                };
                edges.push(DirectedEdge {
                    src: a,
                    dst: b,
                    score: random_f64(rng),
                    sources,
                });
            }
        }
    }
    let g = ProceduralKnowledgeGraph::from_parts(nodes, edges).unwrap();
    if rng.gen_bool(0.5) {
        g.with_config_hash(random_text(rng))
    } else {
        g
    }
}

fn random_labels(rng: &mut ChaCha8Rng) -> LabelFile {
    let scored = |rng: &mut ChaCha8Rng| -> Vec<(usize, f64)> {
        (0..rng.gen_range(0..4))
            .map(|_| (rng.gen_range(0..50), random_f64(rng) * 20.0))
            .collect()
    };
    let hops = rng.gen_range(0..3);
    let records = (0..rng.gen_range(0..6))
        .map(|i| PseudoLabelSet {
            video_id: random_text(rng),
            segment_index: i,
            vnm: scored(rng),
            vtm_db: (0..rng.gen_range(0..3)).map(|_| random_text(rng)).collect(),
            vtm_corpus: (0..rng.gen_range(0..3)).map(|_| random_text(rng)).collect(),
            tcl_db: (0..rng.gen_range(0..4))
                .map(|_| rng.gen_range(0..50))
                .collect(),
            tcl_corpus: (0..rng.gen_range(0..4))
                .map(|_| rng.gen_range(0..50))
                .collect(),
            nrl: NrlLabels {
                inn: (0..hops).map(|_| scored(rng)).collect(),
                out: (0..hops).map(|_| scored(rng)).collect(),
            },
            vsm: scored(rng),
        })
        .collect();
    LabelFile {
        header: LabelHeader {
            format: LABEL_FORMAT.into(),
            version: LABEL_VERSION,
            config_hash: rng.gen_bool(0.5).then(|| random_text(rng)),
            num_nodes: 50,
            num_headlines: 60,
            db_task_ids: (0..3).map(|_| random_text(rng)).collect(),
            corpus_task_names: (0..2).map(|_| random_text(rng)).collect(),
            nrl_hops: hops,
            skipped_videos: rng.gen_range(0..3),
        },
        records,
    }
}

fn random_checkpoint(rng: &mut ChaCha8Rng) -> ModelCheckpoint {
    let shapes: Vec<TensorShape> = (0..rng.gen_range(0..5))
        .map(|i| TensorShape {
            name: format!("t{i}.{}", random_text(rng)),
            rows: rng.gen_range(0..4),
            cols: rng.gen_range(1..5),
        })
        .collect();
    let total = shapes.iter().map(TensorShape::len).sum();
    let weights = (0..total).map(|_| random_f32(rng)).collect();
    ModelCheckpoint::new(
        shapes,
        weights,
        CheckpointMetadata {
            dim: rng.gen_range(1..300),
            bottleneck: 128,
            heads: vec![HeadSpec {
                name: random_text(rng),
                kind: HeadKind::TaskClasses,
                classes: rng.gen_range(1..9),
            }],
            seed: rng.gen(),
            config_hash: rng.gen_bool(0.5).then(|| random_text(rng)),
        },
    )
    .unwrap()
}

/// Saves, loads, saves again; both saves must agree byte for byte and the
/// loaded value must equal the original.
fn round_trip<T: PartialEq>(
    dir: &Path,
    name: &str,
    value: &T,
    save: impl Fn(&T, &Path),
    load: impl Fn(&Path) -> T,
) -> Result<(), String> {
    let (a, b) = (dir.join(format!("a_{name}")), dir.join(format!("b_{name}")));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let (fa, fb) = (a.join(name), b.join(name));
    save(value, &fa);
    let loaded = load(&fa);
    ensure(loaded == *value, || format!("{name}: loaded value differs"))?;
    save(&loaded, &fb);
    let again = load(&fb);
    ensure(again == loaded, || format!("{name}: second load differs"))?;
    ensure(dir_digests(&a) == dir_digests(&b), || {
        format!("{name}: bytes differ")
    })
}

fn format_round_trips() -> Check {
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + i);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        round_trip(
            d,
            "steps.jsonl",
            &random_database(&mut rng),
            |v, p| v.save(p).unwrap(),
            |p| StepDatabase::load(p).unwrap(),
        )?;
        round_trip(
            d,
            "manifest.jsonl",
            &random_corpus(&mut rng),
            |v, p| v.save(p).unwrap(),
            |p| SegmentCorpus::load(p).unwrap(),
        )?;
        round_trip(
            d,
            "graph.json",
            &random_graph(&mut rng),
            |v, p| v.save(p).unwrap(),
            |p| ProceduralKnowledgeGraph::load(p).unwrap(),
        )?;
        round_trip(
            d,
            "labels.jsonl",
            &random_labels(&mut rng),
            |v, p| v.save(p).unwrap(),
            |p| LabelFile::load(p).unwrap(),
        )?;
        round_trip(
            d,
            "model.ckpt",
            &random_checkpoint(&mut rng),
            |v, p| v.save(p).unwrap(),
            |p| ModelCheckpoint::load(p).unwrap(),
        )?;
    }
    Ok("5 formats x 20 instances bit-identical".into())
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let checks: [(&str, fn() -> Check); 10] = [
        ("clustering oracle", clustering_oracle),
        ("edge-scoring oracle", edge_scoring_oracle),
        ("normalization properties", normalization_properties),
        ("NRL oracle", nrl_oracle),
        ("gradient check", gradient_check),
        ("overfit sanity", overfit_sanity),
        ("synthetic graph recovery", graph_recovery),
        ("representation gain", representation_gain),
        ("CLI determinism", cli_determinism),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} ({secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
