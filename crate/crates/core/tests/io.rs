use std::fs;

use pkgforge::checkpoint::ModelCheckpoint;
use pkgforge::config::PipelineConfig;
use pkgforge::corpus::{FeatureMatrix, SegmentCorpus, StepDatabase};
use pkgforge::graph::{build_graph, ProceduralKnowledgeGraph};
use pkgforge::labeler::{emit_labels, LabelFile};
use pkgforge::synth::{generate, WorldConfig};
use pkgforge::Error;

fn small_world() -> WorldConfig {
    WorldConfig {
        n_tasks: 4,
        steps_per_task: (4, 6),
        n_shared_steps: 2,
        shared_fraction: 0.25,
        n_videos: 24,
        dim: 48,
        signal_dim: 32,
        ..WorldConfig::default()
    }
}

#[test]
fn missing_files_name_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nope.jsonl");
    let err = StepDatabase::load(&p).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("nope.jsonl"));
    assert!(SegmentCorpus::load(&p).is_err());
    assert!(LabelFile::load(&p).is_err());
    assert!(ModelCheckpoint::load(&p).is_err());
}

#[test]
fn malformed_lines_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("steps.jsonl");
    fs::write(
        &p,
        "{\"task_id\":\"a\",\"task_name\":\"A\",\"steps\":[{\"headline\":\"x\",\"embedding\":[1.0]}]}\n{oops\n",
    )
    .unwrap();
    match StepDatabase::load(&p).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn truncated_feature_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.pkgf");
    FeatureMatrix::new(2, 3, vec![1.0; 6])
        .unwrap()
        .save(&p)
        .unwrap();
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
    let err = FeatureMatrix::load(&p).unwrap_err().to_string();
    assert!(err.contains("f.pkgf") && err.contains("truncated"), "{err}");
    fs::write(&p, b"XXXX").unwrap();
    assert!(FeatureMatrix::load(&p).is_err());
}

#[test]
fn manifest_row_count_must_match_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let world = generate(&small_world()).unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    world.corpus.save(&manifest).unwrap();
    let text = fs::read_to_string(&manifest).unwrap();
    let first = text.lines().next().unwrap();
    let n = world.corpus.videos[0].num_segments();
    let bad = first.replace(
        &format!("\"num_segments\":{n}"),
        &format!("\"num_segments\":{}", n + 1),
    );
    fs::write(&manifest, text.replacen(first, &bad, 1)).unwrap();
    assert!(SegmentCorpus::load(&manifest).is_err());
}

#[test]
fn empty_corpus_gives_database_edges_only() {
    let world = generate(&small_world()).unwrap();
    let (graph, report) = build_graph(
        &world.database,
        &SegmentCorpus::default(),
        &PipelineConfig::synthetic().graph,
    )
    .unwrap();
    assert_eq!(report.corpus_transitions, 0);
    assert!(graph.edges().iter().all(|e| e.score == 1.0));
    assert_eq!(graph.edges().len(), report.database_transitions);
}

#[test]
fn graph_and_labels_do_not_depend_on_thread_count() {
    let world = generate(&small_world()).unwrap();
    let config = PipelineConfig::synthetic();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let (g, _) = build_graph(&world.database, &world.corpus, &config.graph).unwrap();
                let labels =
                    emit_labels(&world.corpus, &world.database, &g, &config.labels, None).unwrap();
                (g.to_json(), labels.to_jsonl())
            })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    let g = ProceduralKnowledgeGraph::from_json(&one.0).unwrap();
    assert_eq!(g.to_json(), one.0);
}

#[test]
fn world_generation_is_seeded() {
    let a = generate(&small_world()).unwrap();
    let b = generate(&small_world()).unwrap();
    assert_eq!(a.database, b.database);
    assert_eq!(a.corpus, b.corpus);
    let c = generate(&WorldConfig {
        seed: 1,
        ..small_world()
    })
    .unwrap();
    assert_ne!(a.corpus, c.corpus);
}
