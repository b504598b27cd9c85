//! Script text normalization: XML tag stripping and regex-based cleanup.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use super::CorpusError;

/// Matches element tags, comments, processing instructions and declarations.
static TAG_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"</?[A-Za-z_][^<>]*>|<!--[\s\S]*?-->|<\?[^<>]*\?>|<![^<>]*>").unwrap()
});

/// Default transition patterns, matched against each trimmed line.
pub const DEFAULT_TRANSITION_PATTERNS: &[&str] = &[
    r"^(?:SMASH |MATCH |JUMP |QUICK |HARD )?CUT(?: BACK)? TO(?: BLACK)?\s*[:.]?$",
    r"^(?:FADE|IRIS) (?:IN|OUT|TO(?: BLACK| WHITE)?)\s*[:.]?$",
    r"^(?:FADE TO|CUT TO|DISSOLVE TO|WIPE TO|BACK TO)\s*[:.]?$",
    r"^(?:SLOW |RIPPLE )?DISSOLVE(?: TO)?\s*[:.]?$",
    r"^(?:INTERCUT|INTERCUT WITH|TIME CUT|FLASH CUT|END FLASHBACK)\s*[:.]?$",
];

/// True if `text` still contains something [`strip_xml`] would remove.
pub fn contains_tags(text: &str) -> bool {
    TAG_RE.is_match(text)
}

/// Removes markup lexically. Text runs between tags are trimmed, empty runs
/// dropped, and the remaining runs joined with a single newline.
pub fn strip_xml(script: &str) -> String {
    let mut out = strip_once(script);
    // joining runs can assemble a new tag out of stray brackets
    while contains_tags(&out) {
        out = strip_once(&out);
    }
    out
}

fn strip_once(script: &str) -> String {
    let mut blocks: Vec<&str> = Vec::new();
    let mut last = 0;
    for m in TAG_RE.find_iter(script) {
        push_block(&mut blocks, &script[last..m.start()]);
        last = m.end();
    }
    push_block(&mut blocks, &script[last..]);
    blocks.join("\n")
}

fn push_block<'a>(blocks: &mut Vec<&'a str>, run: &'a str) {
    let run = run.trim();
    if !run.is_empty() {
        blocks.push(run);
    }
}

/// Configurable set of line-level transition patterns.
#[derive(Debug, Clone)]
pub struct TransitionRules {
    patterns: Vec<Regex>,
}

impl Default for TransitionRules {
    fn default() -> Self {
        Self::from_patterns(DEFAULT_TRANSITION_PATTERNS.iter().copied())
            .expect("default transition patterns compile")
    }
}

impl TransitionRules {
    pub fn from_patterns<'a>(patterns: impl IntoIterator<Item = &'a str>) -> Result<Self, CorpusError> {
        let patterns = patterns
            .into_iter()
            .map(|p| {
                Regex::new(p).map_err(|e| CorpusError::BadPattern {
                    pattern: p.to_string(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { patterns })
    }

    /// Reads one regex per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_patterns(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn is_transition(&self, line: &str) -> bool {
        let line = line.trim();
        !line.is_empty() && self.patterns.iter().any(|re| re.is_match(line))
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

fn ascii_fold(c: char) -> Option<&'static str> {
    Some(match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' => "'",
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' => "\"",
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' | '\u{2212}' => "-",
        '\u{2026}' => "...",
        '\u{00A0}' | '\u{2007}' | '\u{202F}' => " ",
        _ => return None,
    })
}

/// Removes transition lines, folds typographic quotes and dashes to ASCII,
/// normalizes to NFC and collapses runs of three or more blank lines into one.
pub fn clean_script(script_plain: &str, rules: &TransitionRules) -> String {
    let mut folded = String::with_capacity(script_plain.len());
    for c in script_plain.chars() {
        match ascii_fold(c) {
            Some(s) => folded.push_str(s),
            None => folded.push(c),
        }
    }
    let normalized: String = folded.replace("\r\n", "\n").replace('\r', "\n").nfc().collect();

    let mut out: Vec<&str> = Vec::new();
    let mut blank_run: Vec<&str> = Vec::new();
    for line in normalized.split('\n') {
        if rules.is_transition(line) {
            continue;
        }
        if line.trim().is_empty() {
            blank_run.push(line);
            continue;
        }
        flush_blanks(&mut out, &mut blank_run);
        out.push(line);
    }
    flush_blanks(&mut out, &mut blank_run);
    out.join("\n")
}

fn flush_blanks<'a>(out: &mut Vec<&'a str>, run: &mut Vec<&'a str>) {
    if run.len() >= 3 {
        out.push("");
    } else {
        out.extend(run.iter().copied());
    }
    run.clear();
}
