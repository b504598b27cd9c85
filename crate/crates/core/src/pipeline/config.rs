use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::chunker::ChunkParams;
use crate::classifier::LogRegConfig;
use crate::corpus::DEFAULT_RATIOS;
use crate::embedder::{
    BagOfWordsMockBackend, CacheOnlyBackend, EncoderBackend, HttpBackend, MockBackend, DEFAULT_BATCH_LONG,
    DEFAULT_BATCH_TITLE, DEFAULT_PREFIX,
};
use crate::features::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    MockBow,
    Http,
    CacheOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub dimension: usize,
    pub prefix: String,
    pub batch_long: usize,
    pub batch_title: usize,
    pub timeout_secs: u64,
    /// Whether the HTTP encoder returns unit vectors.
    pub normalized: bool,
    /// Encoded chunks between cache checkpoints.
    pub checkpoint_every: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            url: None,
            dimension: 768,
            prefix: DEFAULT_PREFIX.into(),
            batch_long: DEFAULT_BATCH_LONG,
            batch_title: DEFAULT_BATCH_TITLE,
            timeout_secs: 120,
            normalized: true,
            checkpoint_every: 4096,
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn EncoderBackend>, PipelineError> {
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockBackend::new(self.dimension)),
            BackendKind::MockBow => Box::new(BagOfWordsMockBackend::new(self.dimension)),
            BackendKind::CacheOnly => Box::new(CacheOnlyBackend { dimension: self.dimension }),
            BackendKind::Http => {
                let url = self
                    .url
                    .as_deref()
                    .ok_or_else(|| PipelineError::Validation("backend.url is required for the http backend".into()))?;
                Box::new(HttpBackend::new(url, self.dimension, self.normalized, Duration::from_secs(self.timeout_secs)))
            }
        })
    }
}

/// File locations. Relative paths resolve against the config file's directory;
/// unset outputs live under `work_dir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub awards: PathBuf,
    pub transitions: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub chunks: Option<PathBuf>,
    pub caches: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: DEFAULT_RATIOS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub chunking: ChunkParams,
    pub split: SplitConfig,
    pub backend: BackendConfig,
    pub classifier: LogRegConfig,
    pub variants: Vec<Variant>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: PathsConfig { work_dir: "work".into(), ..Default::default() },
            chunking: ChunkParams::default(),
            split: SplitConfig::default(),
            backend: BackendConfig::default(),
            classifier: LogRegConfig::default(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML, or JSON when the file ends in `.json`.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Validation(m));
        if self.chunking.validate().is_err() {
            return invalid(format!(
                "chunk overlap {} must be below size {}",
                self.chunking.overlap, self.chunking.size
            ));
        }
        if self.backend.dimension == 0 {
            return invalid("backend.dimension must be positive".into());
        }
        if self.variants.is_empty() {
            return invalid("at least one variant is required".into());
        }
        self.classifier.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config as written, so
    /// the same file in two directories hashes the same.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Absolute locations derived from a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPaths {
    pub corpus: PathBuf,
    pub awards: PathBuf,
    pub transitions: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub dataset: PathBuf,
    pub splits: PathBuf,
    pub chunks: PathBuf,
    pub caches: PathBuf,
    pub features: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    pub stamps: PathBuf,
    pub audit: PathBuf,
}

impl ResolvedPaths {
    pub fn new(p: &PathsConfig, base: &Path) -> Self {
        let abs = |x: &Path| if x.is_absolute() { x.to_path_buf() } else { base.join(x) };
        let work_dir = abs(&p.work_dir);
        let out = |o: &Option<PathBuf>, default: &str| o.as_deref().map(abs).unwrap_or_else(|| work_dir.join(default));
        Self {
            corpus: abs(&p.corpus),
            awards: abs(&p.awards),
            transitions: p.transitions.as_deref().map(abs),
            dataset: out(&p.dataset, "movie_o_label.jsonl"),
            splits: out(&p.splits, "splits.json"),
            chunks: out(&p.chunks, "chunks"),
            caches: out(&p.caches, "cache"),
            features: out(&p.features, "features"),
            models: out(&p.models, "models"),
            reports: out(&p.reports, "reports"),
            stamps: work_dir.join("stamps"),
            audit: work_dir.join("audit.jsonl"),
            work_dir,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg = PipelineConfig::parse(
            r#"
seed = 7
variants = ["TITLE", "script-summary-title"]
[paths]
corpus = "in/corpus.jsonl"
awards = "in/awards.csv"
work_dir = "out"
[chunking]
size = 300
overlap = 50
[backend]
kind = "mock-bow"
dimension = 16
[classifier]
C = 0.5
"#,
            false,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.variants, vec![Variant::Title, Variant::ScriptSummaryTitle]);
        assert_eq!(cfg.backend.kind, BackendKind::MockBow);
        assert_eq!(cfg.backend.batch_long, 96);
        assert_eq!(cfg.classifier.c, 0.5);
        assert_eq!(cfg.classifier.max_iter, 5000);
        cfg.validate().unwrap();
        let p = ResolvedPaths::new(&cfg.paths, Path::new("/base"));
        assert_eq!(p.corpus, PathBuf::from("/base/in/corpus.jsonl"));
        assert_eq!(p.models, PathBuf::from("/base/out/models"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::parse("sed = 1", false).is_err());
        assert!(PipelineConfig::parse("[backend]\nkind = \"gpu\"", false).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 43, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn http_needs_url() {
        let b = BackendConfig { kind: BackendKind::Http, ..Default::default() };
        assert!(matches!(b.build(), Err(PipelineError::Validation(_))));
    }
}
