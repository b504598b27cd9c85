//! Chunk encoding through pluggable backends, plus the on-disk embedding cache.

mod cache;
mod http;
mod mock;

use std::path::PathBuf;

use thiserror::Error;

pub use cache::{
    read_records, write_records, CacheKey, CacheManifest, EmbeddingCache, RawRecord, CACHE_MAGIC, CACHE_VERSION,
    MANIFEST_FILE, VECTORS_FILE,
};
pub use http::{EncodeRequest, EncodeResponse, HttpBackend};
pub use mock::{mock_encode, BagOfWordsMockBackend, MockBackend};

/// One chunk embedding, `d` finite values.
pub type EmbeddingVector = Vec<f32>;

/// Prefix the reference encoder expects for classification inputs.
pub const DEFAULT_PREFIX: &str = "query: ";
/// Batch limit for script and summary chunks.
pub const DEFAULT_BATCH_LONG: usize = 96;
/// Batch limit for titles.
pub const DEFAULT_BATCH_TITLE: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("encoder backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("text {0} is empty after prefixing")]
    EmptyText(usize),
    #[error("backend returned a non-finite value for text {0}")]
    NonFinite(usize),
    #[error("corrupt cache: {0}")]
    CorruptCache(String),
    #[error("cache manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A sentence encoder. Implementations must be deterministic: the same text
/// and prefix always map to the same vector.
pub trait EncoderBackend: Send + Sync {
    /// Identifier recorded in cache manifests.
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Whether emitted vectors are already unit-normalized.
    fn normalized_at_encode(&self) -> bool;
    /// Encodes `prefix + text` for every text, in order.
    fn encode(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Encodes `texts` in batches of at most `batch_limit`, checking that the
/// backend returns one finite `d`-vector per input in order.
pub fn encode_batch<S: AsRef<str>>(
    backend: &dyn EncoderBackend,
    texts: &[S],
    prefix: &str,
    batch_limit: usize,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let batch_limit = batch_limit.max(1);
    if prefix.is_empty() {
        if let Some(i) = texts.iter().position(|t| t.as_ref().is_empty()) {
            return Err(EmbedError::EmptyText(i));
        }
    }
    let d = backend.dimension();
    let mut out = Vec::with_capacity(texts.len());
    for (b, batch) in texts.chunks(batch_limit).enumerate() {
        let refs: Vec<&str> = batch.iter().map(AsRef::as_ref).collect();
        let vectors = backend.encode(&refs, prefix)?;
        if vectors.len() != refs.len() {
            return Err(EmbedError::Protocol(format!(
                "sent {} texts, received {} vectors",
                refs.len(),
                vectors.len()
            )));
        }
        for (j, v) in vectors.into_iter().enumerate() {
            if v.len() != d {
                return Err(EmbedError::DimensionMismatch { expected: d, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite(b * batch_limit + j));
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Backend for pipelines that must only read existing caches.
#[derive(Debug, Clone)]
pub struct CacheOnlyBackend {
    pub dimension: usize,
}

impl EncoderBackend for CacheOnlyBackend {
    fn name(&self) -> &str {
        "cache-only"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn normalized_at_encode(&self) -> bool {
        false
    }

    fn encode(&self, _texts: &[&str], _prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Err(EmbedError::BackendUnavailable("cache-only backend cannot encode new text".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Records batch sizes and delegates to the mock.
    struct Counting {
        inner: MockBackend,
        calls: Mutex<Vec<usize>>,
    }

    impl EncoderBackend for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn normalized_at_encode(&self) -> bool {
            true
        }
        fn encode(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
            self.calls.lock().unwrap().push(texts.len());
            self.inner.encode(texts, prefix)
        }
    }

    struct Broken(usize, bool);

    impl EncoderBackend for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn dimension(&self) -> usize {
            4
        }
        fn normalized_at_encode(&self) -> bool {
            false
        }
        fn encode(&self, texts: &[&str], _prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
            let v = if self.1 { vec![f32::NAN; self.0] } else { vec![0.0; self.0] };
            Ok(texts.iter().map(|_| v.clone()).collect())
        }
    }

    #[test]
    fn batches_of_256_plus_remainder() {
        let backend = Counting { inner: MockBackend::new(8), calls: Mutex::new(Vec::new()) };
        let texts: Vec<String> = (0..300).map(|i| format!("title {i}")).collect();
        let out = encode_batch(&backend, &texts, DEFAULT_PREFIX, DEFAULT_BATCH_TITLE).unwrap();
        assert_eq!(*backend.calls.lock().unwrap(), vec![256, 44]);
        assert_eq!(out.len(), 300);
        assert_eq!(out[299], mock_encode("query: title 299", 8));
    }

    #[test]
    fn deterministic_and_distinct() {
        let b = MockBackend::new(16);
        let a1 = encode_batch(&b, &["abc"], DEFAULT_PREFIX, 96).unwrap();
        let a2 = encode_batch(&b, &["abc"], DEFAULT_PREFIX, 96).unwrap();
        assert_eq!(a1, a2);
        let two = encode_batch(&b, &["abc", "abd"], DEFAULT_PREFIX, 96).unwrap();
        assert!(two[0].iter().zip(&two[1]).any(|(x, y)| x != y));
    }

    #[test]
    fn prefix_applied_exactly_once() {
        let b = MockBackend::new(8);
        let v = encode_batch(&b, &["abc"], "query: ", 96).unwrap();
        assert_eq!(v[0], mock_encode("query: abc", 8));
        assert_ne!(v[0], mock_encode("query: query: abc", 8));
    }

    #[test]
    fn empty_text_without_prefix_rejected() {
        let b = MockBackend::new(8);
        assert!(matches!(encode_batch(&b, &["a", ""], "", 96), Err(EmbedError::EmptyText(1))));
        // with a prefix the empty title encodes the prefix alone
        assert_eq!(encode_batch(&b, &[""], "query: ", 96).unwrap()[0], mock_encode("query: ", 8));
    }

    #[test]
    fn wrong_dimension_and_nan_detected() {
        assert!(matches!(
            encode_batch(&Broken(3, false), &["x"], "", 96),
            Err(EmbedError::DimensionMismatch { expected: 4, got: 3 })
        ));
        assert!(matches!(encode_batch(&Broken(4, true), &["x"], "", 96), Err(EmbedError::NonFinite(0))));
    }

    #[test]
    fn cache_only_refuses() {
        let b = CacheOnlyBackend { dimension: 4 };
        assert!(matches!(encode_batch(&b, &["x"], "", 96), Err(EmbedError::BackendUnavailable(_))));
    }
}
