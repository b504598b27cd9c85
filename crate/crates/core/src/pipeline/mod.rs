//! Stage orchestration: dataset, split, chunk, embed, features, train,
//! evaluate, predict and report.

mod artifacts;
mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{chunk_words, ChunkError, ChunkStats, Field};
use crate::classifier::{design_matrix, predict_proba, ClassifierError, LogRegModel};
use crate::corpus::{
    build_dataset, clean_script, load_awards, parse_movie_name, read_dataset, read_raw_corpus, stratified_split,
    strip_xml, token_stats, write_dataset, CorpusError, LabelSummary, ScreenplayRecord, SplitAssignment, SplitTag,
    TransitionRules, WordCountTokenizer,
};
use crate::embedder::{
    encode_batch, CacheManifest, EmbedError, EmbeddingCache, EmbeddingVector, EncoderBackend, CACHE_VERSION,
    MANIFEST_FILE,
};
use crate::evalkit::{evaluate_scores, format_table, tune_threshold, EvalError, EvalReport, ThresholdScan};
use crate::features::{
    fuse_fields, pool_and_normalize, FeatureError, FeatureLayout, FeatureManifest, FeatureMatrix, FieldVector, Variant,
};

pub use artifacts::{sha256_file, sha256_hex, AuditEvent, AuditLog, InputHash, Stamp, Stamps};
pub use config::{BackendConfig, BackendKind, PathsConfig, PipelineConfig, ResolvedPaths, SplitConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_CORRUPT: i32 = 4;

const SPLITS: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 for invalid input or configuration, 3 when the
    /// encoder backend fails, 4 for damaged artifacts.
    pub fn exit_code(&self) -> i32 {
        fn embed(e: &EmbedError) -> i32 {
            match e {
                EmbedError::BackendUnavailable(_)
                | EmbedError::Protocol(_)
                | EmbedError::NonFinite(_)
                | EmbedError::DimensionMismatch { .. } => EXIT_BACKEND,
                EmbedError::CorruptCache(_) => EXIT_CORRUPT,
                _ => EXIT_VALIDATION,
            }
        }
        match self {
            PipelineError::Embed(e) | PipelineError::Feature(FeatureError::Storage(e)) => embed(e),
            PipelineError::Feature(FeatureError::Matrix(_)) | PipelineError::Classifier(ClassifierError::Corrupt(_)) => {
                EXIT_CORRUPT
            }
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub labels: LabelSummary,
    pub skipped_award_rows: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub split: SplitTag,
    pub total: usize,
    pub nominated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkCounts {
    pub imdb_id: String,
    pub title: usize,
    pub summary: usize,
    pub script: usize,
}

impl ChunkCounts {
    pub fn get(&self, field: Field) -> usize {
        match field {
            Field::Title => self.title,
            Field::Summary => self.summary,
            Field::Script => self.script,
        }
    }
}

/// Chunk counts per document; the reference an external encoder checks its
/// own chunking against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkManifest {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub documents: Vec<ChunkCounts>,
    pub stats: Vec<(Field, ChunkStats)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbedSummary {
    /// Calls made to the backend's `encode`.
    pub backend_calls: usize,
    pub chunks_encoded: usize,
    pub documents_encoded: usize,
    pub cache_entries: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub iterations: usize,
    pub final_objective: f64,
    pub threshold: f64,
    pub val_f1: f64,
    pub model_path: PathBuf,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOutput {
    pub variant: Variant,
    pub probability: f64,
    pub threshold: f64,
    pub decision: u8,
}

/// Screenplay to score. `title` may be replaced by a `movie_name` of the
/// form `Title_YYYY`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictInput {
    #[serde(default)]
    pub imdb_id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub movie_name: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub script: Option<String>,
}

/// Wraps a backend and counts `encode` calls.
struct Counting<'a> {
    inner: &'a dyn EncoderBackend,
    calls: AtomicUsize,
}

impl EncoderBackend for Counting<'_> {
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
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.encode(texts, prefix)
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub paths: ResolvedPaths,
    config_hash: String,
    audit: AuditLog,
    stamps: Stamps,
}

fn field_text(r: &ScreenplayRecord, field: Field) -> &str {
    match field {
        Field::Title => &r.title,
        Field::Summary => &r.summary,
        Field::Script => &r.script_clean,
    }
}

fn feature_stem(variant: Variant, split: SplitTag) -> String {
    format!("{}.{}", variant.slug(), split.as_str())
}

impl Pipeline {
    /// `base_dir` anchors relative paths in the config.
    pub fn new(config: PipelineConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let paths = ResolvedPaths::new(&config.paths, base_dir);
        let config_hash = config.hash();
        let audit = AuditLog::new(paths.audit.clone());
        let stamps = Stamps::new(paths.stamps.clone(), paths.work_dir.clone());
        Ok(Self { config, paths, config_hash, audit, stamps })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let config = PipelineConfig::from_file(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, &base)
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn audit_events(&self) -> Vec<AuditEvent> {
        self.audit.events()
    }

    fn log(&self, stage: &str, action: &str, variant: Option<Variant>, split: Option<SplitTag>, detail: String) -> Result<()> {
        self.audit.log(AuditEvent {
            stage: stage.into(),
            action: action.into(),
            variant: variant.map(|v| v.name().to_string()),
            split: split.map(|s| s.as_str().to_string()),
            detail,
        })
    }

    fn require(&self, path: &Path, what: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::Validation(format!("{what} not found at {}; run the upstream stage first", path.display())))
        }
    }

    fn transition_rules(&self) -> Result<TransitionRules> {
        Ok(match &self.paths.transitions {
            Some(p) => TransitionRules::from_file(p)?,
            None => TransitionRules::default(),
        })
    }

    pub fn build_dataset(&self) -> Result<DatasetSummary> {
        self.require(&self.paths.corpus, "corpus")?;
        self.require(&self.paths.awards, "award file")?;
        let mut inputs = InputHash::new().file("corpus", &self.paths.corpus)?.file("awards", &self.paths.awards)?;
        if let Some(t) = &self.paths.transitions {
            inputs = inputs.file("transitions", t)?;
        }
        let inputs = inputs.finish();
        let stats_path = self.paths.work_dir.join("token_stats.json");
        let outputs = [self.paths.dataset.clone(), stats_path.clone()];
        if self.stamps.is_fresh("build-dataset", &inputs, &outputs) {
            let records = read_dataset(&self.paths.dataset)?;
            return Ok(DatasetSummary { labels: LabelSummary::from_records(&records), skipped_award_rows: 0, skipped: true });
        }
        let rules = self.transition_rules()?;
        let raw = read_raw_corpus(&self.paths.corpus)?;
        let (awards, skipped_award_rows) = load_awards(&self.paths.awards)?;
        if awards.is_empty() {
            tracing::warn!("award file has no usable rows; every record will be labeled 0");
        }
        let (records, labels) = build_dataset(raw, &awards, &rules)?;
        if let Some(parent) = self.paths.dataset.parent() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        write_dataset(&self.paths.dataset, &records)?;
        let stats = token_stats(&records, &WordCountTokenizer);
        artifacts::write_atomic(&stats_path, &serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
        self.stamps.record("build-dataset", &inputs, &outputs)?;
        Ok(DatasetSummary { labels, skipped_award_rows, skipped: false })
    }

    pub fn split(&self) -> Result<Vec<SplitCounts>> {
        self.require(&self.paths.dataset, "dataset")?;
        let inputs = InputHash::new()
            .file("dataset", &self.paths.dataset)?
            .json("seed", &self.config.seed)
            .json("ratios", &self.config.split.ratios)
            .finish();
        let records = read_dataset(&self.paths.dataset)?;
        let labels: Vec<u8> = records.iter().map(|r| r.nominated).collect();
        let outputs = [self.paths.splits.clone()];
        let split = if self.stamps.is_fresh("split", &inputs, &outputs) {
            SplitAssignment::read(&self.paths.splits)?
        } else {
            let split = stratified_split(&labels, self.config.split.ratios, self.config.seed)?;
            if let Some(parent) = self.paths.splits.parent() {
                std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            split.write(&self.paths.splits)?;
            self.stamps.record("split", &inputs, &outputs)?;
            split
        };
        Ok(SPLITS
            .iter()
            .map(|&t| {
                let idx = split.indices(t);
                SplitCounts { split: t, total: idx.len(), nominated: idx.iter().filter(|&&i| labels[i] == 1).count() }
            })
            .collect())
    }

    fn chunk_counts(&self, records: &[ScreenplayRecord]) -> Result<Vec<ChunkCounts>> {
        let p = self.config.chunking;
        records
            .iter()
            .map(|r| {
                Ok(ChunkCounts {
                    imdb_id: r.imdb_id.clone(),
                    title: chunk_words(Field::Title, &r.title, p)?.len(),
                    summary: chunk_words(Field::Summary, &r.summary, p)?.len(),
                    script: chunk_words(Field::Script, &r.script_clean, p)?.len(),
                })
            })
            .collect()
    }

    /// Writes the per-document chunk manifest.
    pub fn chunk(&self) -> Result<ChunkManifest> {
        self.require(&self.paths.dataset, "dataset")?;
        let records = read_dataset(&self.paths.dataset)?;
        let documents = self.chunk_counts(&records)?;
        let stats = Field::ALL
            .into_iter()
            .map(|f| (f, ChunkStats::from_counts(&documents.iter().map(|d| d.get(f)).collect::<Vec<_>>())))
            .collect();
        let manifest = ChunkManifest {
            chunk_size: self.config.chunking.size,
            chunk_overlap: self.config.chunking.overlap,
            documents,
            stats,
        };
        let path = self.paths.chunks.join("manifest.json");
        artifacts::write_atomic(&path, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        Ok(manifest)
    }

    /// Writes every chunk as one JSON line of
    /// `{imdb_id, field, chunk_index, start, text}`. Returns the line count.
    pub fn dump_chunks(&self, out: &Path) -> Result<usize> {
        self.require(&self.paths.dataset, "dataset")?;
        let records = read_dataset(&self.paths.dataset)?;
        let mut body = String::new();
        let mut lines = 0;
        for r in &records {
            for field in Field::ALL {
                let set = chunk_words(field, field_text(r, field), self.config.chunking)?;
                for (k, (text, start)) in set.chunks.iter().zip(&set.starts).enumerate() {
                    let line = serde_json::json!({
                        "imdb_id": r.imdb_id,
                        "field": field,
                        "chunk_index": k,
                        "start": start,
                        "text": text,
                    });
                    body.push_str(&line.to_string());
                    body.push('\n');
                    lines += 1;
                }
            }
        }
        artifacts::write_atomic(out, &body)?;
        Ok(lines)
    }

    pub fn embed(&self) -> Result<EmbedSummary> {
        let backend = self.config.backend.build()?;
        self.embed_with(backend.as_ref())
    }

    fn expected_manifest(&self, backend: &dyn EncoderBackend, field: Field) -> CacheManifest {
        CacheManifest {
            format_version: CACHE_VERSION,
            backend: backend.name().to_string(),
            dimension: self.config.backend.dimension,
            prefix: self.config.backend.prefix.clone(),
            chunk_size: self.config.chunking.size,
            chunk_overlap: self.config.chunking.overlap,
            normalized_at_encode: backend.normalized_at_encode(),
            field: Some(field),
            count: 0,
        }
    }

    fn open_cache(&self, field: Field) -> Result<Option<(EmbeddingCache, CacheManifest)>> {
        let dir = self.paths.caches.join(field.as_str());
        if !dir.join(MANIFEST_FILE).exists() {
            return Ok(None);
        }
        let (cache, manifest) = EmbeddingCache::read(&dir)?;
        manifest.check_compatible(self.config.chunking, &self.config.backend.prefix, self.config.backend.dimension)?;
        if manifest.field.is_some_and(|f| f != field) {
            return Err(EmbedError::ManifestMismatch(format!(
                "{} holds {:?} vectors",
                dir.display(),
                manifest.field
            ))
            .into());
        }
        Ok(Some((cache, manifest)))
    }

    /// Encodes every chunk missing from the per-field caches. Documents whose
    /// cached chunk count already matches are skipped, so a rerun after
    /// completion makes no backend calls. On backend failure the progress so
    /// far is written before the error is returned.
    pub fn embed_with(&self, backend: &dyn EncoderBackend) -> Result<EmbedSummary> {
        self.require(&self.paths.dataset, "dataset")?;
        if backend.dimension() != self.config.backend.dimension {
            return Err(PipelineError::Validation(format!(
                "backend dimension {} differs from configured {}",
                backend.dimension(),
                self.config.backend.dimension
            )));
        }
        let records = read_dataset(&self.paths.dataset)?;
        let counting = Counting { inner: backend, calls: AtomicUsize::new(0) };
        let mut summary = EmbedSummary::default();
        let p = self.config.chunking;
        let prefix = &self.config.backend.prefix;
        for field in Field::ALL {
            let dir = self.paths.caches.join(field.as_str());
            let expected = self.expected_manifest(backend, field);
            let (mut cache, manifest, existed) = match self.open_cache(field)? {
                Some((c, m)) => (c, m, true),
                None => (EmbeddingCache::new(self.config.backend.dimension), expected.clone(), false),
            };
            let mut pending = Vec::new();
            for r in &records {
                let chunks = chunk_words(field, field_text(r, field), p)?.chunks;
                if cache.document_len(&r.imdb_id, field) != chunks.len() {
                    pending.push((r.imdb_id.as_str(), chunks));
                }
            }
            if !pending.is_empty() && existed && manifest.backend != backend.name() {
                return Err(EmbedError::ManifestMismatch(format!(
                    "{} was written by backend {:?}, configured backend is {:?}",
                    dir.display(),
                    manifest.backend,
                    backend.name()
                ))
                .into());
            }
            let batch = match field {
                Field::Title => self.config.backend.batch_title,
                _ => self.config.backend.batch_long,
            };
            let checkpoint_every = self.config.backend.checkpoint_every.max(1);
            let mut since_checkpoint = 0;
            let mut group: Vec<(&str, Vec<String>)> = Vec::new();
            let mut group_chunks = 0;
            let n_pending = pending.len();
            for (k, doc) in pending.into_iter().enumerate() {
                group_chunks += doc.1.len();
                group.push(doc);
                if group_chunks < batch && k + 1 < n_pending {
                    continue;
                }
                let texts: Vec<&str> = group.iter().flat_map(|(_, c)| c.iter().map(String::as_str)).collect();
                let vectors = match encode_batch(&counting, &texts, prefix, batch) {
                    Ok(v) => v,
                    Err(e) => {
                        if summary.documents_encoded > 0 || existed {
                            cache.write(&dir, &manifest)?;
                        }
                        return Err(e.into());
                    }
                };
                let mut it = vectors.into_iter();
                for (id, chunks) in group.drain(..) {
                    let v: Vec<EmbeddingVector> = it.by_ref().take(chunks.len()).collect();
                    cache.insert_document(id, field, v)?;
                    summary.documents_encoded += 1;
                }
                summary.chunks_encoded += group_chunks;
                since_checkpoint += group_chunks;
                group_chunks = 0;
                if since_checkpoint >= checkpoint_every {
                    cache.write(&dir, &manifest)?;
                    since_checkpoint = 0;
                }
            }
            if n_pending > 0 || !existed {
                cache.write(&dir, &manifest)?;
            }
            summary.cache_entries.insert(field.as_str().to_string(), cache.len());
        }
        summary.backend_calls = counting.calls.load(Ordering::Relaxed);
        self.log("embed", "encode", None, None, format!("{} backend calls", summary.backend_calls))?;
        Ok(summary)
    }

    fn needed_fields(&self) -> Vec<Field> {
        let mut fields: Vec<Field> = self.config.variants.iter().flat_map(|v| v.fields()).collect();
        fields.sort();
        fields.dedup();
        fields
    }

    /// Pools cached chunk vectors per field and writes one feature matrix
    /// per variant and split.
    pub fn features(&self) -> Result<()> {
        self.require(&self.paths.dataset, "dataset")?;
        self.require(&self.paths.splits, "split file")?;
        let fields = self.needed_fields();
        let mut inputs = InputHash::new()
            .file("dataset", &self.paths.dataset)?
            .file("splits", &self.paths.splits)?
            .json("variants", &self.config.variants);
        let mut manifest_hashes = Vec::new();
        for &f in &fields {
            let dir = self.paths.caches.join(f.as_str());
            self.require(&dir.join(MANIFEST_FILE), &format!("{f} cache"))?;
            let mh = sha256_file(&dir.join(MANIFEST_FILE))?;
            inputs = inputs.text(f.as_str(), &mh).file("vectors", &dir.join(crate::embedder::VECTORS_FILE))?;
            manifest_hashes.push((f, mh));
        }
        let inputs = inputs.finish();
        let outputs: Vec<PathBuf> = self
            .config
            .variants
            .iter()
            .flat_map(|&v| SPLITS.map(|s| feature_stem(v, s)))
            .flat_map(|stem| [self.paths.features.join(format!("{stem}.bin")), self.paths.features.join(format!("{stem}.json"))])
            .collect();
        if self.stamps.is_fresh("features", &inputs, &outputs) {
            return Ok(());
        }

        let records = read_dataset(&self.paths.dataset)?;
        let split = SplitAssignment::read(&self.paths.splits)?;
        if split.tags(records.len()).is_none() {
            return Err(PipelineError::Validation(format!(
                "split file does not partition the {} dataset records",
                records.len()
            )));
        }
        let split_checksum = sha256_file(&self.paths.splits)?;
        let mut pooled: Vec<Vec<FieldVector>> = vec![Vec::new(); records.len()];
        for &f in &fields {
            let (cache, _) = self
                .open_cache(f)?
                .ok_or_else(|| PipelineError::Validation(format!("{f} cache missing")))?;
            for (i, r) in records.iter().enumerate() {
                let expected = chunk_words(f, field_text(r, f), self.config.chunking)?.len();
                if let Some(vectors) = cache.document(&r.imdb_id, f) {
                    if vectors.len() != expected {
                        return Err(EmbedError::ManifestMismatch(format!(
                            "{}/{f}: cache has {} chunks, chunker gives {expected}",
                            r.imdb_id,
                            vectors.len()
                        ))
                        .into());
                    }
                    pooled[i].push(pool_and_normalize(f, &vectors)?);
                } else if expected > 0 {
                    return Err(PipelineError::Validation(format!("{}/{f} not in cache; run embed", r.imdb_id)));
                }
            }
        }
        for &variant in &self.config.variants {
            let layout = FeatureLayout::new(variant, self.config.backend.dimension);
            for tag in SPLITS {
                let rows = split
                    .indices(tag)
                    .iter()
                    .map(|&i| fuse_fields(&records[i].imdb_id, &pooled[i], variant, records[i].nominated))
                    .collect::<Result<Vec<_>, _>>()?;
                let matrix = FeatureMatrix { layout: layout.clone(), rows };
                let manifest = FeatureManifest {
                    layout: layout.clone(),
                    dimension: layout.dimension(),
                    rows: 0,
                    split: tag.as_str().to_string(),
                    split_seed: split.seed,
                    split_checksum: split_checksum.clone(),
                    labels: Vec::new(),
                    renormalized_after_fusion: false,
                    cache_manifests: manifest_hashes.iter().filter(|(f, _)| variant.fields().contains(f)).cloned().collect(),
                };
                matrix.write(&self.paths.features, &feature_stem(variant, tag), &manifest)?;
            }
        }
        self.stamps.record("features", &inputs, &outputs)?;
        Ok(())
    }

    fn read_split(&self, stage: &str, variant: Variant, tag: SplitTag) -> Result<(FeatureMatrix, FeatureManifest)> {
        let stem = feature_stem(variant, tag);
        self.require(&self.paths.features.join(format!("{stem}.json")), &format!("{stem} features"))?;
        let out = FeatureMatrix::read(&self.paths.features, &stem)?;
        self.log(stage, "read_labels", Some(variant), Some(tag), format!("{} rows", out.0.rows.len()))?;
        Ok(out)
    }

    fn model_path(&self, variant: Variant) -> PathBuf {
        self.paths.models.join(format!("{}.json", variant.slug()))
    }

    fn scores(model: &LogRegModel, m: &FeatureMatrix) -> Result<Vec<f64>> {
        m.rows.iter().map(|r| predict_proba(model, &r.values).map_err(Into::into)).collect()
    }

    fn check_layout(model: &LogRegModel, m: &FeatureMatrix) -> Result<()> {
        if model.layout != m.layout {
            return Err(PipelineError::Validation(format!(
                "model layout {:?} does not match feature layout {:?}",
                model.layout, m.layout
            )));
        }
        Ok(())
    }

    fn tune(&self, stage: &str, variant: Variant, model: &mut LogRegModel) -> Result<ThresholdScan> {
        let (val, _) = self.read_split(stage, variant, SplitTag::Val)?;
        Self::check_layout(model, &val)?;
        let scan = tune_threshold(&Self::scores(model, &val)?, &val.labels())?;
        model.set_threshold(scan.tau);
        self.log(stage, "threshold_fixed", Some(variant), Some(SplitTag::Val), format!("{}", scan.tau))?;
        let path = self.paths.models.join(format!("{}.threshold_scan.json", variant.slug()));
        artifacts::write_atomic(&path, &serde_json::to_string_pretty(&scan).expect("scan serializes"))?;
        Ok(scan)
    }

    /// Fits on the train split and tunes the threshold on validation.
    pub fn train(&self, variant: Variant) -> Result<TrainSummary> {
        let stems = [feature_stem(variant, SplitTag::Train), feature_stem(variant, SplitTag::Val)];
        let mut inputs = InputHash::new().json("classifier", &self.config.classifier);
        for s in &stems {
            for ext in ["bin", "json"] {
                let p = self.paths.features.join(format!("{s}.{ext}"));
                self.require(&p, "features")?;
                inputs = inputs.file(s, &p)?;
            }
        }
        let inputs = inputs.finish();
        let path = self.model_path(variant);
        let stage = format!("train.{}", variant.slug());
        if self.stamps.is_fresh(&stage, &inputs, std::slice::from_ref(&path)) {
            let model = LogRegModel::read(&path)?;
            return Ok(TrainSummary {
                variant,
                iterations: model.training.iterations,
                final_objective: model.training.final_objective,
                threshold: model.threshold,
                val_f1: f64::NAN,
                model_path: path,
                skipped: true,
            });
        }
        let (train, tm) = self.read_split("train", variant, SplitTag::Train)?;
        let x = design_matrix(&train.rows.iter().map(|r| &r.values[..]).collect::<Vec<_>>(), train.layout.dimension())?;
        let y = train.labels();
        let fit = crate::classifier::train_logreg(x.view(), &y, &self.config.classifier)?;
        tracing::info!(variant = %variant, iterations = fit.iterations, objective = fit.objective, "fitted");
        let mut model = LogRegModel::from_fit(&fit, self.config.classifier, train.layout.clone(), tm.split_seed, y.len())?;
        let scan = self.tune("train", variant, &mut model)?;
        model.provenance = self.provenance(&tm)?;
        model.write(&path)?;
        self.stamps.record(&stage, &inputs, std::slice::from_ref(&path))?;
        Ok(TrainSummary {
            variant,
            iterations: fit.iterations,
            final_objective: fit.objective,
            threshold: model.threshold,
            val_f1: scan.best_f1,
            model_path: path,
            skipped: false,
        })
    }

    fn provenance(&self, m: &FeatureManifest) -> Result<BTreeMap<String, String>> {
        let mut p = BTreeMap::new();
        p.insert("config_hash".into(), self.config_hash.clone());
        p.insert("split_checksum".into(), m.split_checksum.clone());
        for (f, h) in &m.cache_manifests {
            p.insert(format!("cache_manifest.{f}"), h.clone());
        }
        Ok(p)
    }

    /// Re-tunes the decision threshold of an existing model on validation.
    pub fn tune_threshold(&self, variant: Variant) -> Result<ThresholdScan> {
        let path = self.model_path(variant);
        self.require(&path, "model")?;
        let mut model = LogRegModel::read(&path)?;
        let scan = self.tune("tune-threshold", variant, &mut model)?;
        model.write(&path)?;
        Ok(scan)
    }

    /// Scores the test split at the model's fixed threshold.
    pub fn evaluate(&self, variant: Variant) -> Result<EvalReport> {
        let path = self.model_path(variant);
        self.require(&path, "model")?;
        let model = LogRegModel::read(&path)?;
        if !model.threshold_tuned {
            return Err(PipelineError::Validation(format!("{variant} model has no tuned threshold")));
        }
        self.log("evaluate", "threshold_fixed", Some(variant), None, format!("{}", model.threshold))?;
        let (test, tm) = self.read_split("evaluate", variant, SplitTag::Test)?;
        Self::check_layout(&model, &test)?;
        let scores = Self::scores(&model, &test)?;
        let mut report = evaluate_scores(variant.name(), &scores, &test.labels(), model.threshold)?;
        report.provenance.insert("model_checksum".into(), model.checksum());
        report.provenance.insert("split_file".into(), tm.split_checksum.clone());
        report.provenance.insert("config_hash".into(), self.config_hash.clone());
        for (f, h) in &tm.cache_manifests {
            report.provenance.insert(format!("cache_manifest.{f}"), h.clone());
        }
        let out = self.paths.reports.join(format!("{}.json", variant.slug()));
        artifacts::write_atomic(&out, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        Ok(report)
    }

    /// Evaluates every configured variant and writes the metric table.
    pub fn evaluate_all(&self) -> Result<(Vec<EvalReport>, String)> {
        let reports = self.config.variants.iter().map(|&v| self.evaluate(v)).collect::<Result<Vec<_>>>()?;
        let table = format_table(&reports);
        artifacts::write_atomic(&self.paths.reports.join("table.txt"), &table)?;
        Ok((reports, table))
    }

    pub fn predict_file(&self, variant: Variant, input: &Path) -> Result<PredictOutput> {
        let text = std::fs::read_to_string(input).map_err(|e| PipelineError::io(input, e))?;
        let parsed: PredictInput =
            serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", input.display())))?;
        let backend = self.config.backend.build()?;
        self.predict(variant, &parsed, backend.as_ref())
    }

    pub fn predict(&self, variant: Variant, input: &PredictInput, backend: &dyn EncoderBackend) -> Result<PredictOutput> {
        let path = self.model_path(variant);
        self.require(&path, "model")?;
        let model = LogRegModel::read(&path)?;
        if model.layout.variant != variant || model.layout.embedding_dim != backend.dimension() {
            return Err(PipelineError::Validation(format!(
                "model layout {:?} incompatible with variant {variant} at dimension {}",
                model.layout,
                backend.dimension()
            )));
        }
        let title = match (&input.title, &input.movie_name) {
            (Some(t), _) => Some(t.clone()),
            (None, Some(m)) => Some(parse_movie_name(m)?.0),
            (None, None) => None,
        };
        let rules = self.transition_rules()?;
        let script = input.script.as_ref().map(|s| clean_script(&strip_xml(s), &rules));
        let mut vectors = Vec::new();
        for field in variant.fields() {
            let text = match field {
                Field::Title => title.as_deref(),
                Field::Summary => input.summary.as_deref(),
                Field::Script => script.as_deref(),
            }
            .filter(|t| !t.trim().is_empty())
            .ok_or(FeatureError::MissingField { variant, field })?;
            let chunks = chunk_words(field, text, self.config.chunking)?.chunks;
            let batch = if field == Field::Title { self.config.backend.batch_title } else { self.config.backend.batch_long };
            let emb = match (self.config.backend.kind, &input.imdb_id) {
                (BackendKind::CacheOnly, Some(id)) => self
                    .open_cache(field)?
                    .and_then(|(c, _)| c.document(id, field).map(|v| v.into_iter().cloned().collect::<Vec<_>>()))
                    .ok_or_else(|| EmbedError::BackendUnavailable(format!("{id}/{field} not cached")))?,
                _ => encode_batch(backend, &chunks, &self.config.backend.prefix, batch)?,
            };
            vectors.push(pool_and_normalize(field, &emb)?);
        }
        let row = fuse_fields(input.imdb_id.as_deref().unwrap_or("input"), &vectors, variant, 0)?;
        let probability = predict_proba(&model, &row.values)?;
        Ok(PredictOutput { variant, probability, threshold: model.threshold, decision: u8::from(probability >= model.threshold) })
    }

    /// Renders ROC and PR curves of a saved report as SVG.
    pub fn report(&self, variant: Variant) -> Result<Vec<PathBuf>> {
        let path = self.paths.reports.join(format!("{}.json", variant.slug()));
        self.require(&path, "report")?;
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let rate = (report.confusion.tp + report.confusion.fn_) as f64 / report.n.max(1) as f64;
        let roc = svg::line_plot(
            &format!("ROC {} (AUC {:.3})", report.variant, report.roc_auc),
            "False positive rate",
            "True positive rate",
            &report.roc_points,
            Some(((0.0, 0.0), (1.0, 1.0))),
            false,
        );
        let pr = svg::line_plot(
            &format!("PR {} (AP {:.3})", report.variant, report.pr_auc),
            "Recall",
            "Precision",
            &report.pr_points,
            Some(((0.0, rate), (1.0, rate))),
            true,
        );
        let mut out = Vec::new();
        for (kind, body) in [("roc", roc), ("pr", pr)] {
            let p = self.paths.reports.join(format!("{}.{kind}.svg", variant.slug()));
            artifacts::write_atomic(&p, &body)?;
            out.push(p);
        }
        Ok(out)
    }

    /// Every stage in order for all configured variants.
    pub fn run_all(&self) -> Result<RunSummary> {
        let dataset = self.build_dataset()?;
        let splits = self.split()?;
        let chunks = self.chunk()?;
        let embed = self.embed()?;
        self.features()?;
        let train = self.config.variants.iter().map(|&v| self.train(v)).collect::<Result<Vec<_>>>()?;
        let (reports, table) = self.evaluate_all()?;
        for &v in &self.config.variants {
            self.report(v)?;
        }
        Ok(RunSummary { dataset, splits, chunk_stats: chunks.stats, embed, train, reports, table })
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dataset: DatasetSummary,
    pub splits: Vec<SplitCounts>,
    pub chunk_stats: Vec<(Field, ChunkStats)>,
    pub embed: EmbedSummary,
    pub train: Vec<TrainSummary>,
    pub reports: Vec<EvalReport>,
    pub table: String,
}

/// Label distribution table with one row per split plus the total.
pub fn format_split_table(counts: &[SplitCounts]) -> String {
    let mut s = format!("{:<8} {:>7} {:>10} {:>14} {:>7}\n", "Split", "Total", "Nominated", "Not nominated", "Rate");
    let mut total = (0, 0);
    let mut row = |name: &str, t: usize, p: usize| {
        let rate = if t == 0 { 0.0 } else { p as f64 / t as f64 };
        let _ = writeln!(s, "{name:<8} {t:>7} {p:>10} {:>14} {rate:>7.3}", t - p);
    };
    for c in counts {
        row(c.split.as_str(), c.total, c.nominated);
        total = (total.0 + c.total, total.1 + c.nominated);
    }
    row("all", total.0, total.1);
    s
}

pub fn format_label_summary(s: &LabelSummary) -> String {
    format!(
        "{:<14} {:>7}\n{:<14} {:>7}\n{:<14} {:>7}\n{:<14} {:>7}\n",
        "Total",
        s.total,
        "Nominated",
        s.nominated,
        "Not nominated",
        s.total - s.nominated,
        "Winners",
        s.winners
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Validation("x".into()).exit_code(), EXIT_VALIDATION);
        assert_eq!(PipelineError::Embed(EmbedError::BackendUnavailable("down".into())).exit_code(), EXIT_BACKEND);
        assert_eq!(PipelineError::Embed(EmbedError::CorruptCache("crc".into())).exit_code(), EXIT_CORRUPT);
        assert_eq!(PipelineError::Embed(EmbedError::ManifestMismatch("m".into())).exit_code(), EXIT_VALIDATION);
        assert_eq!(PipelineError::Classifier(ClassifierError::Corrupt("c".into())).exit_code(), EXIT_CORRUPT);
        assert_eq!(
            PipelineError::Feature(FeatureError::Storage(EmbedError::CorruptCache("c".into()))).exit_code(),
            EXIT_CORRUPT
        );
        assert_eq!(PipelineError::Corpus(CorpusError::DuplicateImdbId("tt1".into())).exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn split_table_layout() {
        let t = format_split_table(&[
            SplitCounts { split: SplitTag::Train, total: 1320, nominated: 250 },
            SplitCounts { split: SplitTag::Val, total: 440, nominated: 84 },
            SplitCounts { split: SplitTag::Test, total: 440, nominated: 83 },
        ]);
        assert!(t.contains("train       1320        250           1070"));
        assert!(t.contains("all         2200        417           1783"));
    }
}
