use std::fs;
use std::path::{Path, PathBuf};

use ufw_core::classifier::ClassifierConfig;
use ufw_core::document::{write_documents, Document};
use ufw_core::pipeline::{self, Pipeline, PipelineConfig, PipelineError, Status};
use ufw_core::seedpool::{Polarity, PoolStore, SeedCategory, SeedPoolManifest};
use ufw_core::verify::{EvalScores, PlanConfig, RoundingMode, ShardTokens, CHINESE_METRICS, ENGLISH_METRICS};

fn doc(id: String, words: &[&str], k: usize) -> Document {
    let text: Vec<&str> = (0..10).map(|i| words[(k * 7 + i * 3) % words.len()]).collect();
    Document::new(id, text.join(" "))
}

const GOOD: [&str; 12] = [
    "theorem", "proof", "lemma", "axiom", "vector", "matrix", "integral", "series", "prime", "graph",
    "field", "ring",
];
const BAD: [&str; 12] = [
    "click", "buy", "cheap", "deal", "login", "promo", "casino", "bonus", "free", "offer", "spam", "win",
];

fn setup(root: &Path) -> PathBuf {
    let store = PoolStore::open(root.join("pool")).unwrap();
    let good = (0..40).map(|k| doc(format!("g{k}"), &GOOD, k)).collect();
    let bad = (0..40).map(|k| doc(format!("b{k}"), &BAD, k)).collect();
    let pool = SeedPoolManifest::new()
        .with_category(SeedCategory::new(
            "textbooks",
            Polarity::Positive,
            "synthetic",
            good,
        ))
        .unwrap()
        .with_category(SeedCategory::new("web", Polarity::Negative, "synthetic", bad))
        .unwrap();
    store.save(&pool).unwrap();

    fs::create_dir_all(root.join("raw")).unwrap();
    let raw: Vec<Document> = (0..120)
        .map(|k| {
            let words: &[&str] = if k % 2 == 0 { &GOOD } else { &BAD };
            doc(format!("r{k}"), words, k + 100)
        })
        .collect();
    write_documents(&root.join("raw/part-0.jsonl"), &raw).unwrap();
    root.join("run")
}

pub fn config() -> PipelineConfig {
    PipelineConfig {
        max_rounds: 2,
        sample_size: 80,
        target_training_set: 60,
        pool_dir: PathBuf::from("../pool"),
        raw_shards: vec![PathBuf::from("../raw/part-0.jsonl")],
        default_manifest: vec![ShardTokens {
            shard: "default-0".into(),
            tokens: 1_000_000,
        }],
        classifier: ClassifierConfig {
            dim: 16,
            bucket: 1000,
            min_count: 1,
            ..ClassifierConfig::default()
        },
        verify: PlanConfig {
            global_batch_size: 1,
            sequence_length: 16,
            rounding_mode: RoundingMode::NearestCanonical,
            ..PlanConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn scores(label: &str, value: f64) -> EvalScores {
    EvalScores::new(
        label,
        ENGLISH_METRICS
            .iter()
            .chain(CHINESE_METRICS.iter())
            .map(|m| (m.to_string(), value)),
    )
}

#[test]
fn two_round_run_promotes_the_second_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path());
    let mut p = Pipeline::init(&run, config()).unwrap();
    assert_eq!(p.state().status, Status::AwaitingTrainingSet);
    assert_eq!(p.advance().unwrap().status, Status::AwaitingClassifier);
    assert_eq!(p.advance().unwrap().status, Status::AwaitingVerification);
    assert!(matches!(
        p.advance(),
        Err(PipelineError::InRound { round: 1, .. })
    ));

    for name in [
        "training_set.jsonl",
        "model.ufwc",
        "sample_scores.jsonl",
        "anneal_plan.json",
    ] {
        assert!(run.join("rounds/1").join(name).exists(), "{name}");
    }
    p.ingest_report(&scores("base", 40.0), &scores("cand", 41.0))
        .unwrap();
    assert_eq!(p.state().status, Status::VerdictReady);
    p.advance().unwrap();
    assert_eq!(
        (p.state().round, p.state().status),
        (2, Status::AwaitingTrainingSet)
    );

    let store = PoolStore::open(tmp.path().join("pool")).unwrap();
    let v2 = store.load(p.state().pool_version()).unwrap();
    assert_eq!(v2.parent_version, Some(p.state().rounds[0].pool_version));
    let names: Vec<&str> = v2.categories.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "textbooks",
            "web",
            "round1-inferred-positive",
            "round1-inferred-negative"
        ]
    );
    let inferred: usize = v2.categories[2..].iter().map(|c| c.document_count).sum();
    assert_eq!(inferred, 80);

    p.run_round().unwrap();
    p.ingest_report(&scores("base", 40.0), &scores("cand", 41.0))
        .unwrap();
    p.advance().unwrap();
    let state = p.state().clone();
    assert_eq!(state.status, Status::Promoted);
    let promoted = state.promoted.as_ref().unwrap();
    assert_eq!(promoted.round, 2);
    assert!(matches!(p.advance(), Err(PipelineError::InRound { .. })));
    drop(p);

    let journal = fs::read_to_string(run.join("journal.jsonl")).unwrap();
    assert_eq!(journal.matches(&promoted.model_sha256).count(), 1);
    assert_eq!(pipeline::resume(&run).unwrap(), state);
    assert_eq!(pipeline::resume(&run).unwrap(), state);
}

#[test]
fn unimproved_first_round_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path());
    let mut p = Pipeline::init(&run, config()).unwrap();
    p.run_round().unwrap();
    p.ingest_report(&scores("base", 40.0), &scores("cand", 40.05))
        .unwrap();
    p.advance().unwrap();
    assert_eq!(p.state().status, Status::Rejected);
    assert!(p.state().promoted.is_none());
}

#[test]
fn resume_detects_missing_and_altered_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path());
    let mut p = Pipeline::init(&run, config()).unwrap();
    p.run_round().unwrap();
    drop(p);

    fs::write(run.join("rounds/1/anneal_plan.json"), b"{}").unwrap();
    match pipeline::resume(&run) {
        Err(PipelineError::StateCorrupt(m)) => assert!(m.contains("anneal_plan.json"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
    fs::remove_file(run.join("rounds/1/model.ufwc")).unwrap();
    match Pipeline::open(&run) {
        Err(PipelineError::StateCorrupt(m)) => assert!(m.contains("model.ufwc"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn one_writer_at_a_time() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path());
    let p = Pipeline::init(&run, config()).unwrap();
    assert!(matches!(Pipeline::open(&run), Err(PipelineError::Locked(_))));
    // Read-only status is still allowed.
    assert_eq!(pipeline::resume(&run).unwrap(), *p.state());
    drop(p);
    assert!(Pipeline::open(&run).is_ok());
    assert!(matches!(
        Pipeline::init(&run, config()),
        Err(PipelineError::AlreadyInitialized(_))
    ));
}

#[test]
fn bad_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path());
    let cfg = PipelineConfig {
        sample_size: 0,
        ..config()
    };
    assert!(matches!(
        Pipeline::init(&run, cfg),
        Err(PipelineError::InvalidConfig(_))
    ));
    let cfg = PipelineConfig {
        max_rounds: 0,
        ..config()
    };
    assert!(Pipeline::init(&run, cfg).is_err());
}
