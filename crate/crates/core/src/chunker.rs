//! Overlapping word-window chunking of text fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("chunk overlap {overlap} must be smaller than size {size}")]
    BadParams { size: usize, overlap: usize },
}

/// Text field of a screenplay. The numeric code is used in binary caches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Summary,
    Script,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Title, Field::Summary, Field::Script];

    pub fn code(self) -> u8 {
        match self {
            Field::Title => 0,
            Field::Summary => 1,
            Field::Script => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Title => "title",
            Field::Summary => "summary",
            Field::Script => "script",
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self { size: 400, overlap: 80 }
    }
}

impl ChunkParams {
    pub fn new(size: usize, overlap: usize) -> Result<Self, ChunkError> {
        let p = Self { size, overlap };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.size == 0 || self.overlap >= self.size {
            return Err(ChunkError::BadParams { size: self.size, overlap: self.overlap });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSet {
    pub field: Field,
    pub chunks: Vec<String>,
    pub starts: Vec<usize>,
    pub size: usize,
    pub overlap: usize,
}

impl ChunkSet {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Window start offsets for `word_count` words: `0, stride, 2*stride, ...`
/// while the start is inside the text. A text that fits in one window is a
/// single chunk.
pub fn window_starts(word_count: usize, params: ChunkParams) -> Vec<usize> {
    if word_count == 0 {
        return Vec::new();
    }
    if word_count <= params.size {
        return vec![0];
    }
    (0..word_count).step_by(params.stride()).collect()
}

/// Splits `text` into windows of `params.size` words advancing by
/// `size - overlap`. Words are maximal non-whitespace runs; each chunk is
/// rejoined with single spaces. An empty title yields one empty chunk, any
/// other empty field yields none.
pub fn chunk_words(field: Field, text: &str, params: ChunkParams) -> Result<ChunkSet, ChunkError> {
    params.validate()?;
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut starts = window_starts(words.len(), params);
    let mut chunks: Vec<String> = starts
        .iter()
        .map(|&s| words[s..(s + params.size).min(words.len())].join(" "))
        .collect();
    if words.is_empty() && field == Field::Title {
        starts.push(0);
        chunks.push(String::new());
    }
    Ok(ChunkSet { field, chunks, starts, size: params.size, overlap: params.overlap })
}

/// Chunk counts per field over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkStats {
    pub avg_chunks: f64,
    pub max_chunks: usize,
    pub docs: usize,
}

impl ChunkStats {
    pub fn from_counts(counts: &[usize]) -> Self {
        let docs = counts.len();
        let avg = if docs == 0 { 0.0 } else { counts.iter().sum::<usize>() as f64 / docs as f64 };
        Self {
            avg_chunks: (avg * 10.0).round() / 10.0,
            max_chunks: counts.iter().copied().max().unwrap_or(0),
            docs,
        }
    }
}

/// Per-field chunk statistics over `(field, text)` documents.
pub fn chunk_stats<'a>(
    docs: impl IntoIterator<Item = (Field, &'a str)>,
    params: ChunkParams,
) -> Result<Vec<(Field, ChunkStats)>, ChunkError> {
    params.validate()?;
    let mut counts: [Vec<usize>; 3] = Default::default();
    for (field, text) in docs {
        counts[field.code() as usize].push(chunk_words(field, text, params)?.len());
    }
    Ok(Field::ALL
        .into_iter()
        .filter(|f| !counts[f.code() as usize].is_empty())
        .map(|f| (f, ChunkStats::from_counts(&counts[f.code() as usize])))
        .collect())
}
