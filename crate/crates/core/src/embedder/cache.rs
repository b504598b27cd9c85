//! Embedding cache file format.
//!
//! All integers little-endian:
//!
//! ```text
//! header   magic "MOLEMB01" (8 bytes) | version u32 | d u32 | count u64
//! record   id_len u16 | id (UTF-8) | field code u8 | chunk index u32 | d x f32
//! trailer  CRC32 (IEEE) of all record bytes, u32
//! ```
//!
//! A cache lives in a directory as `vectors.bin` next to `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector};
use crate::chunker::{ChunkParams, Field};

pub const CACHE_MAGIC: &[u8; 8] = b"MOLEMB01";
pub const CACHE_VERSION: u32 = 1;
pub const VECTORS_FILE: &str = "vectors.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

const HEADER_LEN: usize = 8 + 4 + 4 + 8;

/// One framed record, before any interpretation of the code byte.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub code: u8,
    pub index: u32,
    pub values: Vec<f32>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io { path: path.to_path_buf(), source }
}

/// Writes records in the given order. The file is written to a temporary
/// sibling and renamed into place.
pub fn write_records(path: &Path, d: usize, records: &[RawRecord]) -> Result<(), EmbedError> {
    let mut body = Vec::with_capacity(records.len() * (d * 4 + 24));
    for r in records {
        if r.values.len() != d {
            return Err(EmbedError::DimensionMismatch { expected: d, got: r.values.len() });
        }
        let id_len = u16::try_from(r.id.len())
            .map_err(|_| EmbedError::CorruptCache(format!("id too long: {} bytes", r.id.len())))?;
        body.extend_from_slice(&id_len.to_le_bytes());
        body.extend_from_slice(r.id.as_bytes());
        body.push(r.code);
        body.extend_from_slice(&r.index.to_le_bytes());
        for v in &r.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + body.len() + 4);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&(records.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&body);
    bytes.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        if self.buf.len() - self.pos < n {
            return Err(EmbedError::CorruptCache(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, EmbedError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a cache file, verifying magic, version, framing and checksum.
pub fn read_records(path: &Path) -> Result<(usize, Vec<RawRecord>), EmbedError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_records(&bytes)
}

pub(crate) fn parse_records(bytes: &[u8]) -> Result<(usize, Vec<RawRecord>), EmbedError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CACHE_MAGIC {
        return Err(EmbedError::CorruptCache("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(EmbedError::CorruptCache(format!("unsupported version {version}")));
    }
    let d = c.u32()? as usize;
    let count = c.u64()?;
    let body_start = c.pos;
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let id_len = c.u16()? as usize;
        let id = std::str::from_utf8(c.take(id_len)?)
            .map_err(|_| EmbedError::CorruptCache("record id is not UTF-8".into()))?
            .to_string();
        let code = c.take(1)?[0];
        let index = c.u32()?;
        let raw = c.take(d * 4)?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        records.push(RawRecord { id, code, index, values });
    }
    let body = &bytes[body_start..c.pos];
    let stored = c.u32()?;
    if c.pos != bytes.len() {
        return Err(EmbedError::CorruptCache(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    if crc32fast::hash(body) != stored {
        return Err(EmbedError::CorruptCache("checksum mismatch".into()));
    }
    Ok((d, records))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CacheKey {
    pub imdb_id: String,
    pub field: Field,
    pub chunk_index: u32,
}

/// Chunk embeddings keyed by `(imdb_id, field, chunk_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dimension: usize,
    entries: BTreeMap<CacheKey, EmbeddingVector>,
}

impl EmbeddingCache {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, entries: BTreeMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CacheKey, &EmbeddingVector)> {
        self.entries.iter()
    }

    /// Replaces all chunks of one document.
    pub fn insert_document(
        &mut self,
        imdb_id: &str,
        field: Field,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<(), EmbedError> {
        if let Some(v) = vectors.iter().find(|v| v.len() != self.dimension) {
            return Err(EmbedError::DimensionMismatch { expected: self.dimension, got: v.len() });
        }
        self.remove_document(imdb_id, field);
        for (i, v) in vectors.into_iter().enumerate() {
            let key = CacheKey { imdb_id: imdb_id.to_string(), field, chunk_index: i as u32 };
            self.entries.insert(key, v);
        }
        Ok(())
    }

    fn doc_range(&self, imdb_id: &str, field: Field) -> impl Iterator<Item = (&CacheKey, &EmbeddingVector)> {
        let lo = CacheKey { imdb_id: imdb_id.to_string(), field, chunk_index: 0 };
        let hi = CacheKey { imdb_id: imdb_id.to_string(), field, chunk_index: u32::MAX };
        self.entries.range(lo..=hi)
    }

    pub fn remove_document(&mut self, imdb_id: &str, field: Field) {
        let keys: Vec<CacheKey> = self.doc_range(imdb_id, field).map(|(k, _)| k.clone()).collect();
        for k in keys {
            self.entries.remove(&k);
        }
    }

    /// Chunk vectors of one document in chunk order, if present.
    pub fn document(&self, imdb_id: &str, field: Field) -> Option<Vec<&EmbeddingVector>> {
        let v: Vec<&EmbeddingVector> = self.doc_range(imdb_id, field).map(|(_, v)| v).collect();
        (!v.is_empty()).then_some(v)
    }

    pub fn document_len(&self, imdb_id: &str, field: Field) -> usize {
        self.doc_range(imdb_id, field).count()
    }

    /// Every document's chunk indices must be exactly `0..n`.
    pub fn check_dense(&self) -> Result<(), EmbedError> {
        let mut prev: Option<&CacheKey> = None;
        for key in self.entries.keys() {
            let expected = match prev {
                Some(p) if p.imdb_id == key.imdb_id && p.field == key.field => p.chunk_index + 1,
                _ => 0,
            };
            if key.chunk_index != expected {
                return Err(EmbedError::CorruptCache(format!(
                    "{}/{} has chunk {} where {} was expected",
                    key.imdb_id, key.field, key.chunk_index, expected
                )));
            }
            prev = Some(key);
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<RawRecord> {
        self.entries
            .iter()
            .map(|(k, v)| RawRecord { id: k.imdb_id.clone(), code: k.field.code(), index: k.chunk_index, values: v.clone() })
            .collect()
    }

    pub fn from_records(d: usize, records: Vec<RawRecord>) -> Result<Self, EmbedError> {
        let mut cache = Self::new(d);
        for r in records {
            let field = Field::from_code(r.code)
                .ok_or_else(|| EmbedError::CorruptCache(format!("unknown field code {}", r.code)))?;
            let key = CacheKey { imdb_id: r.id, field, chunk_index: r.index };
            if cache.entries.insert(key.clone(), r.values).is_some() {
                return Err(EmbedError::CorruptCache(format!(
                    "duplicate key {}/{}/{}",
                    key.imdb_id, key.field, key.chunk_index
                )));
            }
        }
        cache.check_dense()?;
        Ok(cache)
    }

    /// Writes `vectors.bin` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, manifest: &CacheManifest) -> Result<(), EmbedError> {
        self.check_dense()?;
        if manifest.dimension != self.dimension {
            return Err(EmbedError::ManifestMismatch(format!(
                "manifest dimension {} but cache holds {}",
                manifest.dimension, self.dimension
            )));
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_records(&dir.join(VECTORS_FILE), self.dimension, &self.to_records())?;
        let manifest = CacheManifest { count: self.len() as u64, ..manifest.clone() };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }

    /// Reads a cache directory and cross-checks it against its manifest.
    pub fn read(dir: &Path) -> Result<(Self, CacheManifest), EmbedError> {
        let manifest = CacheManifest::read(dir)?;
        let (d, records) = read_records(&dir.join(VECTORS_FILE))?;
        let cache = Self::from_records(d, records)?;
        if manifest.dimension != d || manifest.count != cache.len() as u64 {
            return Err(EmbedError::ManifestMismatch(format!(
                "manifest says d={} count={}, file has d={} count={}",
                manifest.dimension,
                manifest.count,
                d,
                cache.len()
            )));
        }
        Ok((cache, manifest))
    }
}

/// Sidecar metadata describing how a cache was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format_version: u32,
    pub backend: String,
    pub dimension: usize,
    pub prefix: String,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub normalized_at_encode: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<Field>,
    pub count: u64,
}

impl CacheManifest {
    pub fn read(dir: &Path) -> Result<Self, EmbedError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| EmbedError::CorruptCache(format!("{}: {e}", path.display())))
    }

    pub fn chunk_params(&self) -> ChunkParams {
        ChunkParams { size: self.chunk_size, overlap: self.chunk_overlap }
    }

    /// Guards a pipeline against consuming a cache built with other settings.
    pub fn check_compatible(&self, params: ChunkParams, prefix: &str, dimension: usize) -> Result<(), EmbedError> {
        let mut problems = Vec::new();
        if self.format_version != CACHE_VERSION {
            problems.push(format!("format version {} (expected {CACHE_VERSION})", self.format_version));
        }
        if self.chunk_params() != params {
            problems.push(format!(
                "chunking {}/{} (pipeline uses {}/{})",
                self.chunk_size, self.chunk_overlap, params.size, params.overlap
            ));
        }
        if self.prefix != prefix {
            problems.push(format!("prefix {:?} (pipeline uses {prefix:?})", self.prefix));
        }
        if self.dimension != dimension {
            problems.push(format!("dimension {} (pipeline uses {dimension})", self.dimension));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EmbedError::ManifestMismatch(problems.join("; ")))
        }
    }
}
