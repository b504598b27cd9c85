//! Ranking and threshold metrics for imbalanced binary evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("invalid score or label: {0}")]
    InvalidInput(String),
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(EvalError::InvalidInput(format!("score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::InvalidInput(format!("label {l}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, stable on input order.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mann-Whitney AUC with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks doubled so midranks stay integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        let tied_pos = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank_sum2 += mid2 * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Tied-score groups in descending order as `(score, positives, total)`.
fn cut_points(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let idx = order_desc(scores);
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for k in idx {
        match groups.last_mut() {
            Some(g) if g.0 == scores[k] => {
                g.1 += labels[k] as usize;
                g.2 += 1;
            }
            _ => groups.push((scores[k], labels[k] as usize, 1)),
        }
    }
    groups
}

/// Step-wise average precision over descending unique score cut points.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, gp, gn) in cut_points(scores, labels) {
        tp += gp;
        seen += gn;
        if gp > 0 {
            ap += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class F1, macro-F1 and accuracy. A class with no support (neither
/// predicted nor present) scores 0 and logs a warning.
pub fn f1_scores(predictions: &[u8], labels: &[u8]) -> Result<F1Scores, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    let mut c = Confusion::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(EvalError::InvalidInput(format!("prediction {p}, label {l}"))),
        }
    }
    if c.tp + c.fp + c.fn_ == 0 {
        tracing::warn!("positive class has no support; F1 defined as 0");
    }
    if c.tn + c.fn_ + c.fp == 0 {
        tracing::warn!("negative class has no support; F1 defined as 0");
    }
    let f1_pos = f1(c.tp, c.fp, c.fn_);
    let f1_neg = f1(c.tn, c.fn_, c.fp);
    let accuracy = if c.total() == 0 { 0.0 } else { (c.tp + c.tn) as f64 / c.total() as f64 };
    Ok(F1Scores { f1_pos, f1_neg, macro_f1: (f1_pos + f1_neg) / 2.0, accuracy, confusion: c })
}

/// Number of grid points: 0.05 to 0.95 in steps of 0.01.
pub const GRID_LEN: usize = 91;

/// Grid point `k` is exactly `(5 + k) / 100`.
pub fn threshold_grid() -> Vec<f64> {
    (0..GRID_LEN).map(|k| (5 + k) as f64 / 100.0).collect()
}

pub fn labels_at(scores: &[f64], tau: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= tau)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub grid: Vec<f64>,
    pub f1: Vec<f64>,
    pub best_index: usize,
    pub tau: f64,
    pub best_f1: f64,
}

/// Positive-class F1 over the grid; the lowest threshold attaining the max.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<ThresholdScan, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let grid = threshold_grid();
    let f1s: Vec<f64> = grid
        .iter()
        .map(|&t| f1_scores(&labels_at(scores, t), labels).map(|s| s.f1_pos))
        .collect::<Result<_, _>>()?;
    let mut best_index = 0;
    for (k, &v) in f1s.iter().enumerate() {
        if v > f1s[best_index] {
            best_index = k;
        }
    }
    Ok(ThresholdScan { tau: grid[best_index], best_f1: f1s[best_index], best_index, grid, f1: f1s })
}

/// ROC points `(fpr, tpr)` from (0,0) to (1,1), one per cut point.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    for (_, gp, gn) in cut_points(scores, labels) {
        tp += gp;
        fp += gn - gp;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// PR points `(recall, precision)` starting at recall 0 with precision 1.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>, EvalError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut pts = vec![(0.0, 1.0)];
    let (mut tp, mut seen) = (0, 0);
    for (_, gp, gn) in cut_points(scores, labels) {
        tp += gp;
        seen += gn;
        pts.push((tp as f64 / pos as f64, tp as f64 / seen as f64));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n: usize,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub macro_f1: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
    pub provenance: BTreeMap<String, String>,
}

/// All metrics at the fixed threshold `tau`.
pub fn evaluate_scores(variant: &str, scores: &[f64], labels: &[u8], tau: f64) -> Result<EvalReport, EvalError> {
    let f = f1_scores(&labels_at(scores, tau), labels)?;
    Ok(EvalReport {
        variant: variant.to_string(),
        n: labels.len(),
        accuracy: f.accuracy,
        roc_auc: roc_auc(scores, labels)?,
        pr_auc: average_precision(scores, labels)?,
        f1_pos: f.f1_pos,
        f1_neg: f.f1_neg,
        macro_f1: f.macro_f1,
        threshold: tau,
        confusion: f.confusion,
        roc_points: roc_curve(scores, labels)?,
        pr_points: pr_curve(scores, labels)?,
        provenance: BTreeMap::new(),
    })
}

/// Metric table with one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<22} {:>6} {:>6} {:>6} {:>7} {:>7} {:>8}\n",
        "Variant", "Acc", "ROC", "PR", "F1_pos", "F1_neg", "MacroF1"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<22} {:>6.3} {:>6.3} {:>6.3} {:>7.3} {:>7.3} {:>8.3}\n",
            r.variant, r.accuracy, r.roc_auc, r.pr_auc, r.f1_pos, r.f1_neg, r.macro_f1
        ));
    }
    out
}
