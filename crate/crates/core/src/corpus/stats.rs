use serde::{Deserialize, Serialize};

use super::ScreenplayRecord;

/// Token counter supplied by an embedding backend.
pub trait Tokenizer {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Whitespace word counts; the fallback when no model tokenizer is available.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCountTokenizer;

impl Tokenizer for WordCountTokenizer {
    fn name(&self) -> &str {
        "whitespace-words"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub count: usize,
}

impl SummaryStats {
    /// `None` for an empty sample.
    pub fn from_counts(counts: &[usize]) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
        Some(Self { median, mean, min: sorted[0], max: sorted[n - 1], count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTokenStats {
    pub tokenizer: String,
    pub title: Option<SummaryStats>,
    pub summary: Option<SummaryStats>,
    pub script: Option<SummaryStats>,
}

pub fn token_stats(records: &[ScreenplayRecord], tokenizer: &dyn Tokenizer) -> FieldTokenStats {
    let field = |get: fn(&ScreenplayRecord) -> &str| {
        let counts: Vec<usize> = records.iter().map(|r| tokenizer.count(get(r))).collect();
        SummaryStats::from_counts(&counts)
    };
    FieldTokenStats {
        tokenizer: tokenizer.name().to_string(),
        title: field(|r| &r.title),
        summary: field(|r| &r.summary),
        script: field(|r| &r.script_clean),
    }
}
