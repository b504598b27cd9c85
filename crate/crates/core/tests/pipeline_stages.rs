use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use molabel::chunker::{chunk_words, ChunkParams, Field};
use molabel::corpus::{read_dataset, CorpusError, RawScreenplay};
use molabel::embedder::{EmbedError, EmbeddingCache, EmbeddingVector, EncoderBackend, MockBackend};
use molabel::features::{FeatureError, Variant};
use molabel::pipeline::{
    BackendKind, Pipeline, PipelineConfig, PipelineError, PredictInput, EXIT_BACKEND, EXIT_CORRUPT, EXIT_VALIDATION,
};
use molabel::synth::{generate, SynthMode, SynthSpec};

fn config(n: usize, seed: u64) -> (SynthSpec, PipelineConfig) {
    let spec = SynthSpec { n_records: n, positive_rate: 0.3, seed, mode: SynthMode::Marker, ..Default::default() };
    let mut cfg = PipelineConfig::default();
    cfg.paths.corpus = "input/corpus.jsonl".into();
    cfg.paths.awards = "input/awards.csv".into();
    cfg.backend.kind = BackendKind::MockBow;
    cfg.backend.dimension = 16;
    cfg.variants = vec![Variant::ScriptSummaryTitle, Variant::ScriptSummary, Variant::Title];
    (spec, cfg)
}

fn pipeline(dir: &Path, n: usize) -> Pipeline {
    let (spec, cfg) = config(n, 11);
    generate(&spec).write(&dir.join("input")).unwrap();
    Pipeline::new(cfg, dir).unwrap()
}

struct Counted<'a> {
    inner: &'a dyn EncoderBackend,
    calls: AtomicUsize,
    fail_after: usize,
}

impl<'a> Counted<'a> {
    fn new(inner: &'a dyn EncoderBackend, fail_after: usize) -> Self {
        Self { inner, calls: AtomicUsize::new(0), fail_after }
    }
}

impl EncoderBackend for Counted<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn normalized_at_encode(&self) -> bool {
        self.inner.normalized_at_encode()
    }

    fn encode(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_after {
            return Err(EmbedError::BackendUnavailable("connection reset".into()));
        }
        self.inner.encode(texts, prefix)
    }
}

fn cache_records(p: &Pipeline) -> Vec<Vec<molabel::embedder::RawRecord>> {
    Field::ALL
        .iter()
        .map(|f| EmbeddingCache::read(&p.paths.caches.join(f.as_str())).unwrap().0.to_records())
        .collect()
}

#[test]
fn cache_holds_one_vector_per_chunk_and_rerun_is_free() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, mut cfg) = config(3, 5);
    cfg.backend.kind = BackendKind::Mock;
    generate(&SynthSpec { script_words: (700, 1500), ..spec }).write(&dir.path().join("input")).unwrap();
    let p = Pipeline::new(cfg, dir.path()).unwrap();
    p.build_dataset().unwrap();
    let records = read_dataset(&p.paths.dataset).unwrap();
    let mock = MockBackend::new(16);

    let first = p.embed_with(&mock).unwrap();
    for f in Field::ALL {
        let want: usize = records
            .iter()
            .map(|r| {
                let text = match f {
                    Field::Title => &r.title,
                    Field::Summary => &r.summary,
                    Field::Script => &r.script_clean,
                };
                chunk_words(f, text, ChunkParams::default()).unwrap().len()
            })
            .sum();
        assert_eq!(first.cache_entries[f.as_str()], want, "{f}");
    }
    assert!(first.cache_entries["script"] > 3);

    let counted = Counted::new(&mock, usize::MAX);
    let again = p.embed_with(&counted).unwrap();
    assert_eq!(again.backend_calls, 0);
    assert_eq!(counted.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn interrupted_embed_resumes_to_the_same_cache() {
    let reference_dir = tempfile::tempdir().unwrap();
    let reference = pipeline(reference_dir.path(), 12);
    reference.build_dataset().unwrap();
    reference.embed().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let (spec, mut cfg) = config(12, 11);
    cfg.backend.batch_long = 4;
    cfg.backend.batch_title = 4;
    cfg.backend.checkpoint_every = 1;
    generate(&spec).write(&dir.path().join("input")).unwrap();
    let p = Pipeline::new(cfg, dir.path()).unwrap();
    p.build_dataset().unwrap();
    let backend = p.config.backend.build().unwrap();

    let flaky = Counted::new(backend.as_ref(), 2);
    let err = p.embed_with(&flaky).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_BACKEND);
    let (partial, _) = EmbeddingCache::read(&p.paths.caches.join("title")).unwrap();
    assert!(!partial.is_empty() && partial.len() < 12, "{} titles checkpointed", partial.len());

    let resumed = Counted::new(backend.as_ref(), usize::MAX);
    let s = p.embed_with(&resumed).unwrap();
    assert!(s.documents_encoded < 36);
    assert_eq!(cache_records(&p), cache_records(&reference));
}

#[test]
fn cache_with_other_chunking_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 4);
    p.build_dataset().unwrap();
    p.embed().unwrap();

    let (_, mut cfg) = config(4, 11);
    cfg.chunking = ChunkParams::new(300, 50).unwrap();
    let q = Pipeline::new(cfg, dir.path()).unwrap();
    let err = q.embed().unwrap_err();
    assert!(matches!(err, PipelineError::Embed(EmbedError::ManifestMismatch(ref m)) if m.contains("400/80")), "{err}");
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}

#[test]
fn stages_skip_completed_work_and_evaluation_follows_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 40);
    let first = p.run_all().unwrap();
    assert!(!first.dataset.skipped);
    let model = std::fs::read(p.paths.models.join("script_summary_title.json")).unwrap();

    assert!(p.build_dataset().unwrap().skipped);
    assert_eq!(p.embed().unwrap().backend_calls, 0);
    for v in [Variant::ScriptSummaryTitle, Variant::Title] {
        assert!(p.train(v).unwrap().skipped, "{v}");
    }
    assert_eq!(std::fs::read(p.paths.models.join("script_summary_title.json")).unwrap(), model);

    let events = p.audit_events();
    for v in ["SCRIPT+SUMMARY+TITLE", "TITLE"] {
        let of = |stage: &str, action: &str, split: Option<&str>| {
            events.iter().position(|e| {
                e.stage == stage && e.action == action && e.variant.as_deref() == Some(v) && e.split.as_deref() == split
            })
        };
        let tuned = of("train", "threshold_fixed", Some("val")).expect("threshold tuned");
        let fixed = of("evaluate", "threshold_fixed", None).expect("threshold fixed");
        let test_read = of("evaluate", "read_labels", Some("test")).expect("test labels read");
        assert!(tuned < fixed && fixed < test_read, "{v}: {tuned} {fixed} {test_read}");
        let first_test_read = events
            .iter()
            .position(|e| e.variant.as_deref() == Some(v) && e.split.as_deref() == Some("test"))
            .unwrap();
        assert_eq!(first_test_read, test_read, "{v}");
    }
}

#[test]
fn predict_is_consistent_and_guards_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 40);
    p.run_all().unwrap();
    let backend = p.config.backend.build().unwrap();
    let raw = molabel::corpus::read_raw_corpus(&p.paths.corpus).unwrap();
    let r = &raw[0];
    let input = PredictInput {
        imdb_id: Some(r.imdb_id.clone()),
        title: None,
        movie_name: Some(r.movie_name.clone()),
        summary: Some(r.summary.clone()),
        script: Some(r.script.clone()),
    };
    let out = p.predict(Variant::ScriptSummaryTitle, &input, backend.as_ref()).unwrap();
    assert!(out.probability > 0.0 && out.probability < 1.0);
    assert_eq!(out.decision, u8::from(out.probability >= out.threshold));

    let no_summary = PredictInput { summary: None, ..input.clone() };
    let err = p.predict(Variant::ScriptSummaryTitle, &no_summary, backend.as_ref()).unwrap_err();
    assert!(matches!(err, PipelineError::Feature(FeatureError::MissingField { field: Field::Summary, .. })), "{err}");

    let title_only = PredictInput { summary: None, script: None, ..input };
    let err = p.predict(Variant::ScriptSummary, &title_only, backend.as_ref()).unwrap_err();
    assert!(matches!(err, PipelineError::Feature(FeatureError::MissingField { field: Field::Script, .. })), "{err}");
    let err = p.predict(Variant::ScriptSummaryTitle, &title_only, backend.as_ref()).unwrap_err();
    assert!(matches!(err, PipelineError::Feature(FeatureError::MissingField { .. })), "{err}");
}

#[test]
fn damaged_model_is_a_corrupt_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 40);
    p.run_all().unwrap();
    let path = p.paths.models.join("title.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"threshold\":", "\"threshold\": 0.0, \"x\":", 1)).unwrap();
    let err = p.evaluate(Variant::Title).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CORRUPT, "{err}");
}

#[test]
fn empty_award_file_labels_everything_negative() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 10);
    std::fs::write(&p.paths.awards, "imdb_id,category_class,won\n").unwrap();
    let s = p.build_dataset().unwrap();
    assert_eq!(s.labels.total, 10);
    assert_eq!(s.labels.nominated, 0);
}

#[test]
fn duplicate_ids_are_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 5);
    let mut raw = molabel::corpus::read_raw_corpus(&p.paths.corpus).unwrap();
    let dup = RawScreenplay { movie_name: "Other Film_2001".into(), ..raw[1].clone() };
    raw.push(dup);
    molabel::corpus::write_raw_corpus(&p.paths.corpus, &raw).unwrap();
    let err = p.build_dataset().unwrap_err();
    assert!(matches!(err, PipelineError::Corpus(CorpusError::DuplicateImdbId(_))), "{err}");
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}
