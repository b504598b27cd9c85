use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingVector, EncoderBackend};

/// Stable 64-bit text hash: the first eight bytes of SHA-256, little-endian.
/// The empty string maps to 0.
pub(crate) fn text_seed(text: &str) -> u64 {
    if text.is_empty() {
        return 0;
    }
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn unit_random(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d)
        .map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0)
        .collect();
    normalize_or_basis(&mut v);
    v
}

fn normalize_or_basis(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

/// Deterministic unit-norm pseudo-embedding of an already prefixed text.
///
/// The seed is [`text_seed`] of the text; coordinates are uniform in
/// `[-1, 1)` from a ChaCha8 stream, then scaled to unit L2 norm in f64 and
/// stored as f32. Bitwise identical on every platform.
pub fn mock_encode(text: &str, d: usize) -> EmbeddingVector {
    unit_random(text_seed(text), d).into_iter().map(|x| x as f32).collect()
}

/// Test double for a sentence encoder: every distinct input maps to an
/// unrelated random direction, so texts carry no shared signal.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dimension: usize,
}

impl MockBackend {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "mock dimension must be positive");
        Self { dimension }
    }
}

impl EncoderBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn normalized_at_encode(&self) -> bool {
        true
    }

    fn encode(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| mock_encode(&format!("{prefix}{t}"), self.dimension))
            .collect())
    }
}

/// Bag-of-words test double: the normalized sum of per-word mock vectors.
/// Texts sharing words share directions, so lexical signal survives pooling.
#[derive(Debug, Clone)]
pub struct BagOfWordsMockBackend {
    dimension: usize,
}

impl BagOfWordsMockBackend {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "mock dimension must be positive");
        Self { dimension }
    }

    fn encode_one(&self, text: &str, memo: &mut HashMap<String, Vec<f64>>) -> EmbeddingVector {
        let mut acc = vec![0.0f64; self.dimension];
        let mut any = false;
        for word in text.split_whitespace() {
            any = true;
            let key = word.to_lowercase();
            let w = memo.entry(key).or_insert_with_key(|k| unit_random(text_seed(k), self.dimension));
            acc.iter_mut().zip(w.iter()).for_each(|(a, x)| *a += x);
        }
        if !any {
            return mock_encode("", self.dimension);
        }
        normalize_or_basis(&mut acc);
        acc.into_iter().map(|x| x as f32).collect()
    }
}

impl EncoderBackend for BagOfWordsMockBackend {
    fn name(&self) -> &str {
        "mock-bow"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn normalized_at_encode(&self) -> bool {
        true
    }

    fn encode(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut memo = HashMap::new();
        Ok(texts.iter().map(|t| self.encode_one(&format!("{prefix}{t}"), &mut memo)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    #[test]
    fn unit_norm() {
        for text in ["", "a", "query: The Matrix", "x y z"] {
            for d in [1, 3, 768] {
                assert!((norm(&mock_encode(text, d)) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_text_uses_zero_seed() {
        assert_eq!(text_seed(""), 0);
        let zero_seed: Vec<f32> = unit_random(0, 8).into_iter().map(|x| x as f32).collect();
        assert_eq!(mock_encode("", 8), zero_seed);
    }

    #[test]
    fn bitwise_stable_across_platforms() {
        // recomputed independently: sha256("query: abc")[..8] as LE u64
        let digest = Sha256::digest(b"query: abc");
        let mut seed = 0u64;
        for (i, b) in digest[..8].iter().enumerate() {
            seed |= (*b as u64) << (8 * i);
        }
        assert_eq!(text_seed("query: abc"), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..4).map(|_| (rng.next_u64() >> 11) as f64 / 9007199254740992.0 * 2.0 - 1.0).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<u32> = raw.iter().map(|x| ((x / n) as f32).to_bits()).collect();
        let got: Vec<u32> = mock_encode("query: abc", 4).iter().map(|x| x.to_bits()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn frozen_values() {
        // pinned so any change in hash, PRNG or float conversion is caught
        let bits: Vec<u32> = mock_encode("query: abc", 4).iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, FROZEN_QUERY_ABC);
    }

    const FROZEN_QUERY_ABC: [u32; 4] = [3163971646, 1060093525, 3189345771, 3207992683];

    #[test]
    fn bag_of_words_shares_signal() {
        let b = BagOfWordsMockBackend::new(64);
        let v = b.encode(&["red apple pie", "red apple tart", "blue ocean wave"], "").unwrap();
        let dot = |a: &[f32], c: &[f32]| a.iter().zip(c).map(|(x, y)| (*x as f64) * (*y as f64)).sum::<f64>();
        assert!(dot(&v[0], &v[1]) > dot(&v[0], &v[2]) + 0.3);
        assert!((norm(&v[0]) - 1.0).abs() < 1e-6);
        assert_eq!(b.encode(&["a b"], "").unwrap(), b.encode(&["a   b"], "").unwrap());
    }
}
