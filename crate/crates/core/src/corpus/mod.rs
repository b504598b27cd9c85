//! Dataset construction: MovieSum-style screenplays joined with award records
//! by IMDb id, cleaned script variants, stratified splits and length statistics.

mod clean;
mod labels;
mod split;
mod stats;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clean::{clean_script, contains_tags, strip_xml, TransitionRules, DEFAULT_TRANSITION_PATTERNS};
pub use labels::{assign_labels, load_awards, AwardRecord, LabelSummary, NOMINATION_CLASSES};
pub use split::{stratified_split, SplitAssignment, SplitTag, DEFAULT_RATIOS};
pub use stats::{token_stats, FieldTokenStats, SummaryStats, Tokenizer, WordCountTokenizer};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed movie name {0:?}: expected <title>_YYYY")]
    MalformedName(String),
    #[error("duplicate imdb id {0} in corpus")]
    DuplicateImdbId(String),
    #[error("invalid imdb id {0:?}")]
    InvalidImdbId(String),
    #[error("class {0} has no members")]
    EmptyClass(u8),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("bad transition pattern {pattern:?}: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("record invariant violated for {imdb_id}: {reason}")]
    Invariant { imdb_id: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// One film of the labeled dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenplayRecord {
    pub movie_name: String,
    pub imdb_id: String,
    pub script: String,
    pub script_plain: String,
    pub script_clean: String,
    pub summary: String,
    pub title: String,
    pub year: i32,
    pub nominated: u8,
    pub winner: u8,
}

impl ScreenplayRecord {
    /// Builds an unlabeled record from raw MovieSum fields.
    pub fn from_raw(raw: RawScreenplay, rules: &TransitionRules) -> Result<Self, CorpusError> {
        let (title, year) = parse_movie_name(&raw.movie_name)?;
        if !is_imdb_id(&raw.imdb_id) {
            return Err(CorpusError::InvalidImdbId(raw.imdb_id));
        }
        let script_plain = strip_xml(&raw.script);
        let script_clean = clean_script(&script_plain, rules);
        Ok(Self {
            movie_name: raw.movie_name,
            imdb_id: raw.imdb_id,
            script: raw.script,
            script_plain,
            script_clean,
            summary: raw.summary,
            title,
            year,
            nominated: 0,
            winner: 0,
        })
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: &str| {
            Err(CorpusError::Invariant { imdb_id: self.imdb_id.clone(), reason: reason.to_string() })
        };
        if self.nominated > 1 || self.winner > 1 {
            return fail("labels must be 0 or 1");
        }
        if self.winner == 1 && self.nominated == 0 {
            return fail("winner without nomination");
        }
        if self.title.is_empty() {
            return fail("empty title");
        }
        match parse_movie_name(&self.movie_name) {
            Ok((_, y)) if y == self.year => {}
            _ => return fail("year does not match movie_name suffix"),
        }
        if contains_tags(&self.script_plain) {
            return fail("script_plain still contains markup");
        }
        Ok(())
    }
}

/// Input row of a MovieSum-style JSON-lines corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawScreenplay {
    pub movie_name: String,
    pub imdb_id: String,
    pub script: String,
    pub summary: String,
}

/// Splits `title_YYYY` on its final underscore.
pub fn parse_movie_name(movie_name: &str) -> Result<(String, i32), CorpusError> {
    let malformed = || CorpusError::MalformedName(movie_name.to_string());
    let (title, year) = movie_name.rsplit_once('_').ok_or_else(malformed)?;
    if title.is_empty() || year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    Ok((title.to_string(), year.parse().map_err(|_| malformed())?))
}

pub fn is_imdb_id(id: &str) -> bool {
    id.len() > 2 && id.starts_with("tt") && id[2..].bytes().all(|b| b.is_ascii_digit())
}

pub fn check_unique_ids(records: &[ScreenplayRecord]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.imdb_id.as_str()) {
            return Err(CorpusError::DuplicateImdbId(r.imdb_id.clone()));
        }
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

pub fn read_raw_corpus(path: &Path) -> Result<Vec<RawScreenplay>, CorpusError> {
    read_jsonl(path)
}

pub fn write_raw_corpus(path: &Path, rows: &[RawScreenplay]) -> Result<(), CorpusError> {
    write_jsonl(path, rows)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ScreenplayRecord>, CorpusError> {
    let records: Vec<ScreenplayRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[ScreenplayRecord]) -> Result<(), CorpusError> {
    write_jsonl(path, records)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("records serialize");
        w.write_all(line.as_bytes()).map_err(|e| CorpusError::io(path, e))?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Cleans every raw screenplay and joins the award labels.
pub fn build_dataset(
    raw: Vec<RawScreenplay>,
    awards: &[AwardRecord],
    rules: &TransitionRules,
) -> Result<(Vec<ScreenplayRecord>, LabelSummary), CorpusError> {
    let records = raw
        .into_iter()
        .map(|r| ScreenplayRecord::from_raw(r, rules))
        .collect::<Result<Vec<_>, _>>()?;
    let records = assign_labels(records, awards)?;
    let summary = LabelSummary::from_records(&records);
    Ok((records, summary))
}
