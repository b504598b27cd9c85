//! Synthetic screenplay corpora for offline end-to-end runs.
//!
//! Text and labels come from separate random streams, so in [`SynthMode::Null`]
//! labels carry no information about the text. [`SynthMode::Marker`] plants a
//! fixed phrase in the script and summary of every positive film.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_raw_corpus, CorpusError, RawScreenplay};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const AWARDS_FILE: &str = "awards.csv";

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "te", "su", "no", "vi", "da", "pe", "zu", "ho", "ni", "ba", "fo", "ge", "ly", "qua", "re",
    "sa", "tu", "wen", "xo", "yor",
];
const NAMES: &[&str] = &["ANNA", "BORIS", "CLARA", "DEV", "ELENA", "FINN", "GRACE", "HUGO", "IRIS", "JONAS"];
const TRANSITIONS: &[&str] = &["CUT TO:", "FADE IN:", "DISSOLVE TO:", "SMASH CUT TO:", "FADE OUT."];
const DISTRACTOR_CLASSES: &[&str] = &["Directing", "Acting", "Music", "Production"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Null,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_records: usize,
    pub positive_rate: f64,
    pub seed: u64,
    pub mode: SynthMode,
    pub marker: String,
    /// Inclusive word-count range of the script body.
    pub script_words: (usize, usize),
    pub summary_words: (usize, usize),
    pub vocab_size: usize,
    /// Words between planted markers in marker mode.
    pub marker_every: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_records: 50,
            positive_rate: 0.2,
            seed: 7,
            mode: SynthMode::Null,
            marker: "golden lighthouse whisper".into(),
            script_words: (450, 1300),
            summary_words: (60, 220),
            vocab_size: 1500,
            marker_every: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthAward {
    pub imdb_id: String,
    pub category_class: String,
    pub won: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub screenplays: Vec<RawScreenplay>,
    pub awards: Vec<SynthAward>,
    /// Ground-truth nomination label per screenplay.
    pub labels: Vec<u8>,
}

fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut words = std::collections::BTreeSet::new();
    while words.len() < size {
        let n = rng.random_range(2..=3);
        let w: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        words.insert(w);
    }
    let mut words: Vec<String> = words.into_iter().collect();
    words.shuffle(rng);
    words
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], n: usize) -> Vec<String> {
    // Zipf-like skew so some words recur across documents
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let k = ((vocab.len() as f64).powf(u) - 1.0) as usize;
            vocab[k.min(vocab.len() - 1)].clone()
        })
        .collect()
}

fn plant(words: &mut Vec<String>, marker: &str, every: usize, rng: &mut ChaCha8Rng) {
    let phrase: Vec<String> = marker.split_whitespace().map(str::to_string).collect();
    let slots = (words.len() / every).max(1);
    for s in (0..slots).rev() {
        let lo = s * every;
        let hi = ((s + 1) * every).min(words.len());
        let at = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        words.splice(at..at, phrase.iter().cloned());
    }
}

fn script_markup(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    let mut out = String::from("<script>\n");
    let mut rest = words;
    while !rest.is_empty() {
        out.push_str("<scene>\n");
        let take = rng.random_range(20..60).min(rest.len());
        out.push_str(&format!("<stage_direction>{}</stage_direction>\n", rest[..take].join(" ")));
        rest = &rest[take..];
        let lines = rng.random_range(1..4);
        for _ in 0..lines {
            if rest.is_empty() {
                break;
            }
            let take = rng.random_range(8..30).min(rest.len());
            let name = NAMES[rng.random_range(0..NAMES.len())];
            out.push_str(&format!("<character>{name}</character>\n<dialogue>{}</dialogue>\n", rest[..take].join(" ")));
            rest = &rest[take..];
        }
        out.push_str("</scene>\n");
        if rng.random_bool(0.5) {
            out.push_str(TRANSITIONS[rng.random_range(0..TRANSITIONS.len())]);
            out.push('\n');
        }
    }
    out.push_str("</script>\n");
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Deterministic corpus for `spec`.
pub fn generate(spec: &SynthSpec) -> SynthCorpus {
    let n = spec.n_records;
    let mut label_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6c61_6265_6c73);
    let n_pos = ((n as f64) * spec.positive_rate).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos.min(n))).collect();
    labels.shuffle(&mut label_rng);

    let mut vocab_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = vocabulary(&mut vocab_rng, spec.vocab_size.max(16));

    let mut screenplays = Vec::with_capacity(n);
    let mut awards = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1));
        let imdb_id = format!("tt{:07}", 9_000_000 + i);
        let title_len = rng.random_range(1..=3);
        let title: Vec<String> = sentence(&mut rng, &vocab, title_len).iter().map(|w| capitalize(w)).collect();
        let year = rng.random_range(1990..=2023);
        let movie_name = format!("{}_{year}", title.join(" "));

        let script_n = rng.random_range(spec.script_words.0..=spec.script_words.1.max(spec.script_words.0));
        let summary_n = rng.random_range(spec.summary_words.0..=spec.summary_words.1.max(spec.summary_words.0));
        let mut script_words = sentence(&mut rng, &vocab, script_n);
        let mut summary_words = sentence(&mut rng, &vocab, summary_n);
        if spec.mode == SynthMode::Marker && label == 1 {
            let mut mrng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((i as u64) << 20));
            let every = spec.marker_every.max(1);
            plant(&mut script_words, &spec.marker, every, &mut mrng);
            plant(&mut summary_words, &spec.marker, every, &mut mrng);
        }
        let script = script_markup(&mut rng, &script_words);
        let summary = summary_words.join(" ");
        screenplays.push(RawScreenplay { movie_name, imdb_id: imdb_id.clone(), script, summary });

        if label == 1 {
            let class = if label_rng.random_bool(0.7) { "Writing" } else { "Title" };
            awards.push(SynthAward { imdb_id: imdb_id.clone(), category_class: class.into(), won: label_rng.random_bool(0.25) });
            if label_rng.random_bool(0.2) {
                awards.push(SynthAward { imdb_id: imdb_id.clone(), category_class: "Writing".into(), won: false });
            }
        }
        if label_rng.random_bool(0.15) {
            let class = DISTRACTOR_CLASSES[label_rng.random_range(0..DISTRACTOR_CLASSES.len())];
            awards.push(SynthAward { imdb_id, category_class: class.into(), won: label_rng.random_bool(0.3) });
        }
    }
    SynthCorpus { screenplays, awards, labels }
}

impl SynthCorpus {
    /// Writes `corpus.jsonl` and `awards.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), CorpusError> {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let corpus = dir.join(CORPUS_FILE);
        write_raw_corpus(&corpus, &self.screenplays)?;
        let awards = dir.join(AWARDS_FILE);
        let mut w = csv::Writer::from_path(&awards).map_err(|e| CorpusError::io(&awards, e.into()))?;
        for a in &self.awards {
            w.serialize(a).map_err(|e| CorpusError::io(&awards, e.into()))?;
        }
        w.flush().map_err(|e| CorpusError::io(&awards, e))?;
        Ok((corpus, awards))
    }
}
