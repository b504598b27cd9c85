use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Persisted split file: `{seed, train: [...], val: [...], test: [...]}`,
/// indices into the dataset in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn indices(&self, tag: SplitTag) -> &[usize] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tag per dataset index; `None` if the assignment is not a partition of `0..n`.
    pub fn tags(&self, n: usize) -> Option<Vec<SplitTag>> {
        let mut tags = vec![None; n];
        for tag in SplitTag::ALL {
            for &i in self.indices(tag) {
                if i >= n || tags[i].is_some() {
                    return None;
                }
                tags[i] = Some(tag);
            }
        }
        tags.into_iter().collect()
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let text = serde_json::to_string(self).expect("split serializes");
        std::fs::write(path, text).map_err(|e| CorpusError::io(path, e))
    }
}

const RATIO_SCALE: f64 = 1e9;

/// Largest-remainder apportionment of `n` items over integer weights;
/// remainder ties go to the earlier slot.
fn apportion(n: usize, weights: &[u64; 3]) -> [usize; 3] {
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    let mut counts = [0usize; 3];
    let mut rems = [0u128; 3];
    for s in 0..3 {
        let q = n as u128 * weights[s] as u128;
        counts[s] = (q / total) as usize;
        rems[s] = q % total;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let leftover = n - counts.iter().sum::<usize>();
    for &s in order.iter().take(leftover) {
        counts[s] += 1;
    }
    counts
}

/// Stratified train/val/test split.
///
/// Split sizes are apportioned over the whole dataset first, then the
/// positives are apportioned over the splits and negatives fill the rest, so
/// each split's positive count is within one of its proportional share.
/// Each class is shuffled with a ChaCha8 stream seeded by `seed`.
pub fn stratified_split(labels: &[u8], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, CorpusError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    let mut pos: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(i, _)| i).collect();
    let mut neg: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y != 1).map(|(i, _)| i).collect();
    if pos.is_empty() {
        return Err(CorpusError::EmptyClass(1));
    }
    if neg.is_empty() {
        return Err(CorpusError::EmptyClass(0));
    }

    let weights = ratios.map(|r| (r * RATIO_SCALE).round() as u64);
    let totals = apportion(labels.len(), &weights);
    let mut pos_counts = apportion(pos.len(), &weights);
    // a tiny negative class can leave a split with more positive slots than rows
    while let Some(over) = (0..3).find(|&s| pos_counts[s] > totals[s]) {
        let under = (0..3).find(|&s| pos_counts[s] < totals[s]).expect("fewer positives than rows");
        pos_counts[over] -= 1;
        pos_counts[under] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut parts: [Vec<usize>; 3] = Default::default();
    let (mut p_off, mut n_off) = (0, 0);
    for s in 0..3 {
        let n_pos = pos_counts[s];
        let n_neg = totals[s] - n_pos;
        parts[s].extend_from_slice(&pos[p_off..p_off + n_pos]);
        parts[s].extend_from_slice(&neg[n_off..n_off + n_neg]);
        parts[s].sort_unstable();
        p_off += n_pos;
        n_off += n_neg;
    }
    let [train, val, test] = parts;
    Ok(SplitAssignment { seed, train, val, test })
}
