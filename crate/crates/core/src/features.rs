//! Mean/max pooling of chunk embeddings into per-field vectors, L2
//! normalization, and fusion of fields into model feature rows.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Field;
use crate::embedder::{read_records, write_records, EmbedError, RawRecord};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot pool an empty set of vectors")]
    EmptyInput,
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variant {variant} needs the {field} field, which is missing")]
    MissingField { variant: Variant, field: Field },
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("feature matrix: {0}")]
    Matrix(String),
    #[error(transparent)]
    Storage(#[from] EmbedError),
}

/// Feature configuration: which field vectors are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Variant {
    #[serde(rename = "TITLE")]
    Title,
    #[serde(rename = "SCRIPT")]
    Script,
    #[serde(rename = "SUMMARY")]
    Summary,
    #[serde(rename = "SCRIPT+SUMMARY")]
    ScriptSummary,
    #[serde(rename = "SCRIPT+SUMMARY+TITLE")]
    ScriptSummaryTitle,
}

/// Order in which field blocks appear in every fused row.
pub const FIELD_ORDER: [Field; 3] = [Field::Script, Field::Summary, Field::Title];

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ScriptSummaryTitle,
        Variant::ScriptSummary,
        Variant::Summary,
        Variant::Script,
        Variant::Title,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Title => "TITLE",
            Variant::Script => "SCRIPT",
            Variant::Summary => "SUMMARY",
            Variant::ScriptSummary => "SCRIPT+SUMMARY",
            Variant::ScriptSummaryTitle => "SCRIPT+SUMMARY+TITLE",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Title => "title",
            Variant::Script => "script",
            Variant::Summary => "summary",
            Variant::ScriptSummary => "script_summary",
            Variant::ScriptSummaryTitle => "script_summary_title",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::Title => 0,
            Variant::Script => 1,
            Variant::Summary => 2,
            Variant::ScriptSummary => 3,
            Variant::ScriptSummaryTitle => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    /// Fields used, in [`FIELD_ORDER`].
    pub fn fields(self) -> Vec<Field> {
        let used: &[Field] = match self {
            Variant::Title => &[Field::Title],
            Variant::Script => &[Field::Script],
            Variant::Summary => &[Field::Summary],
            Variant::ScriptSummary => &[Field::Script, Field::Summary],
            Variant::ScriptSummaryTitle => &[Field::Script, Field::Summary, Field::Title],
        };
        FIELD_ORDER.into_iter().filter(|f| used.contains(f)).collect()
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', '-', ' '], "+");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| FeatureError::UnknownVariant(s.to_string()))
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Block structure of a fused row; stored with every model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub variant: Variant,
    pub fields: Vec<Field>,
    /// Chunk embedding dimension `d`; each field block has `2d` entries.
    pub embedding_dim: usize,
}

impl FeatureLayout {
    pub fn new(variant: Variant, embedding_dim: usize) -> Self {
        Self { variant, fields: variant.fields(), embedding_dim }
    }

    pub fn dimension(&self) -> usize {
        2 * self.embedding_dim * self.fields.len()
    }
}

fn check_dims<V: AsRef<[f32]>>(vectors: &[V]) -> Result<usize, FeatureError> {
    let d = vectors.first().ok_or(FeatureError::EmptyInput)?.as_ref().len();
    if let Some(v) = vectors.iter().find(|v| v.as_ref().len() != d) {
        return Err(FeatureError::DimensionMismatch { expected: d, got: v.as_ref().len() });
    }
    Ok(d)
}

/// Coordinate-wise arithmetic mean.
pub fn mean_pool<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Vec<f64>, FeatureError> {
    let d = check_dims(vectors)?;
    let mut acc = vec![0.0f64; d];
    for v in vectors {
        acc.iter_mut().zip(v.as_ref()).for_each(|(a, &x)| *a += x as f64);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Coordinate-wise maximum.
pub fn max_pool<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Vec<f64>, FeatureError> {
    let d = check_dims(vectors)?;
    let mut acc = vec![f64::NEG_INFINITY; d];
    for v in vectors {
        acc.iter_mut().zip(v.as_ref()).for_each(|(a, &x)| *a = a.max(x as f64));
    }
    Ok(acc)
}

/// Pooled and normalized representation of one field of one screenplay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub field: Field,
    pub mean_part: Vec<f64>,
    pub max_part: Vec<f64>,
    /// `[mean; max] / ||[mean; max]||_2`, length `2d`.
    pub normalized: Vec<f64>,
    pub n_chunks: usize,
    /// Set when the concatenation was the zero vector and `normalized` is zeros.
    pub degenerate: bool,
}

impl FieldVector {
    pub fn dim(&self) -> usize {
        self.mean_part.len()
    }
}

/// Mean and max pooling, concatenation, then L2 normalization. A zero
/// concatenation comes back as zeros with `degenerate` set.
pub fn pool_and_normalize<V: AsRef<[f32]>>(field: Field, vectors: &[V]) -> Result<FieldVector, FeatureError> {
    let mean_part = mean_pool(vectors)?;
    let max_part = max_pool(vectors)?;
    let norm = mean_part.iter().chain(&max_part).map(|x| x * x).sum::<f64>().sqrt();
    let degenerate = norm == 0.0;
    let normalized = if degenerate {
        tracing::warn!(%field, "pooled vector is zero; emitting zeros");
        vec![0.0; 2 * mean_part.len()]
    } else {
        mean_part.iter().chain(&max_part).map(|x| x / norm).collect()
    };
    Ok(FieldVector { field, mean_part, max_part, normalized, n_chunks: vectors.len(), degenerate })
}

/// One screenplay's model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub imdb_id: String,
    pub variant: Variant,
    pub values: Vec<f32>,
    pub label: u8,
}

/// Concatenates the variant's field vectors in [`FIELD_ORDER`]. The fused
/// row is not renormalized.
pub fn fuse_fields(
    imdb_id: &str,
    field_vectors: &[FieldVector],
    variant: Variant,
    label: u8,
) -> Result<FeatureRow, FeatureError> {
    let mut values = Vec::new();
    let mut d = None;
    for field in variant.fields() {
        let fv = field_vectors
            .iter()
            .find(|fv| fv.field == field)
            .ok_or(FeatureError::MissingField { variant, field })?;
        match d {
            None => d = Some(fv.dim()),
            Some(d) if d != fv.dim() => return Err(FeatureError::DimensionMismatch { expected: d, got: fv.dim() }),
            _ => {}
        }
        values.extend(fv.normalized.iter().map(|&x| x as f32));
    }
    let layout = FeatureLayout::new(variant, d.unwrap_or(0));
    debug_assert_eq!(values.len(), layout.dimension());
    Ok(FeatureRow { imdb_id: imdb_id.to_string(), variant, values, label })
}

/// Metadata stored next to a feature matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub layout: FeatureLayout,
    pub dimension: usize,
    pub rows: usize,
    pub split: String,
    pub split_seed: u64,
    /// SHA-256 of the split file the rows were selected with.
    pub split_checksum: String,
    /// Labels aligned with file row order.
    pub labels: Vec<u8>,
    pub renormalized_after_fusion: bool,
    /// SHA-256 of each consumed cache manifest, by field.
    pub cache_manifests: Vec<(Field, String)>,
}

/// Rows of one split and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub layout: FeatureLayout,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Writes `<stem>.bin` (cache record format, variant code in the field
    /// slot, row index in the chunk slot) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str, manifest: &FeatureManifest) -> Result<(), FeatureError> {
        let dim = self.layout.dimension();
        fs::create_dir_all(dir).map_err(|source| EmbedError::Io { path: dir.to_path_buf(), source })?;
        let records: Vec<RawRecord> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| RawRecord { id: r.imdb_id.clone(), code: r.variant.code(), index: i as u32, values: r.values.clone() })
            .collect();
        write_records(&dir.join(format!("{stem}.bin")), dim, &records)?;
        let manifest = FeatureManifest { labels: self.labels(), rows: self.rows.len(), dimension: dim, ..manifest.clone() };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|source| EmbedError::Io { path, source })?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<(Self, FeatureManifest), FeatureError> {
        let mpath = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&mpath).map_err(|source| EmbedError::Io { path: mpath.clone(), source })?;
        let manifest: FeatureManifest = serde_json::from_str(&text)
            .map_err(|e| EmbedError::CorruptCache(format!("{}: {e}", mpath.display())))?;
        let (dim, records) = read_records(&dir.join(format!("{stem}.bin")))?;
        if dim != manifest.layout.dimension() || records.len() != manifest.labels.len() {
            return Err(FeatureError::Matrix(format!(
                "{stem}: file has {} rows of dim {dim}, manifest expects {} rows of dim {}",
                records.len(),
                manifest.labels.len(),
                manifest.layout.dimension()
            )));
        }
        let rows = records
            .into_iter()
            .zip(&manifest.labels)
            .enumerate()
            .map(|(i, (r, &label))| {
                if r.index as usize != i || Variant::from_code(r.code) != Some(manifest.layout.variant) {
                    return Err(FeatureError::Matrix(format!("{stem}: row {i} out of order or wrong variant")));
                }
                Ok(FeatureRow { imdb_id: r.id, variant: manifest.layout.variant, values: r.values, label })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((Self { layout: manifest.layout.clone(), rows }, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_two() {
        assert_eq!(mean_pool(&[vec![1.0f32, 3.0], vec![5.0, 1.0]]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn pooling_single_vector_is_identity() {
        let v = vec![vec![0.25f32, -1.5, 7.0]];
        assert_eq!(mean_pool(&v).unwrap(), vec![0.25, -1.5, 7.0]);
        assert_eq!(max_pool(&v).unwrap(), vec![0.25, -1.5, 7.0]);
    }

    #[test]
    fn mean_of_77_copies() {
        let v = vec![0.1f32, -0.7, 0.33];
        let m = mean_pool(&vec![v.clone(); 77]).unwrap();
        for (a, b) in m.iter().zip(&v) {
            assert!((a - *b as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn max_examples() {
        assert_eq!(max_pool(&[vec![1.0f32, 3.0], vec![5.0, 1.0]]).unwrap(), vec![5.0, 3.0]);
        assert_eq!(max_pool(&[vec![-2.0f32, -1.0], vec![-3.0, -5.0]]).unwrap(), vec![-2.0, -1.0]);
    }

    #[test]
    fn empty_input() {
        let none: Vec<Vec<f32>> = Vec::new();
        assert!(matches!(mean_pool(&none), Err(FeatureError::EmptyInput)));
        assert!(matches!(max_pool(&none), Err(FeatureError::EmptyInput)));
        assert!(matches!(pool_and_normalize(Field::Script, &none), Err(FeatureError::EmptyInput)));
        assert!(matches!(mean_pool(&[vec![1.0f32], vec![1.0, 2.0]]), Err(FeatureError::DimensionMismatch { .. })));
    }

    #[test]
    fn three_four_example() {
        let fv = pool_and_normalize(Field::Script, &[vec![3.0f32, 4.0]]).unwrap();
        // ||[3,4,3,4]|| = sqrt(50)
        let n = 50f64.sqrt();
        let expected = [3.0 / n, 4.0 / n, 3.0 / n, 4.0 / n];
        for (a, b) in fv.normalized.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!fv.degenerate);
    }

    #[test]
    fn zero_vectors_give_zeros_not_nan() {
        let fv = pool_and_normalize(Field::Title, &[vec![0.0f32; 3], vec![0.0; 3]]).unwrap();
        assert!(fv.degenerate);
        assert_eq!(fv.normalized, vec![0.0; 6]);
    }

    fn fv(field: Field, d: usize) -> FieldVector {
        pool_and_normalize(field, &[vec![1.0f32; d]]).unwrap()
    }

    #[test]
    fn fused_dimensions() {
        let all = [fv(Field::Title, 768), fv(Field::Summary, 768), fv(Field::Script, 768)];
        assert_eq!(fuse_fields("tt1", &all, Variant::ScriptSummaryTitle, 1).unwrap().values.len(), 4608);
        assert_eq!(fuse_fields("tt1", &all, Variant::Title, 1).unwrap().values.len(), 1536);
        assert_eq!(FeatureLayout::new(Variant::ScriptSummaryTitle, 768).dimension(), 4608);
    }

    #[test]
    fn fusion_order_is_script_summary_title() {
        let t = pool_and_normalize(Field::Title, &[vec![1.0f32, 0.0]]).unwrap();
        let s = pool_and_normalize(Field::Summary, &[vec![0.0f32, 1.0]]).unwrap();
        let c = pool_and_normalize(Field::Script, &[vec![-1.0f32, 0.0]]).unwrap();
        let row = fuse_fields("tt1", &[t.clone(), s.clone(), c.clone()], Variant::ScriptSummaryTitle, 0).unwrap();
        let expect: Vec<f32> = c.normalized.iter().chain(&s.normalized).chain(&t.normalized).map(|&x| x as f32).collect();
        assert_eq!(row.values, expect);
    }

    #[test]
    fn missing_field() {
        let err = fuse_fields("tt1", &[fv(Field::Title, 4)], Variant::ScriptSummary, 0).unwrap_err();
        assert!(matches!(err, FeatureError::MissingField { field: Field::Script, .. }));
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.slug().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
        assert!("PLOT".parse::<Variant>().is_err());
        assert_eq!(serde_json::to_string(&Variant::ScriptSummary).unwrap(), "\"SCRIPT+SUMMARY\"");
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = FeatureLayout::new(Variant::Title, 2);
        let rows = vec![
            FeatureRow { imdb_id: "tt2".into(), variant: Variant::Title, values: vec![0.5, 0.5, 0.5, 0.5], label: 1 },
            FeatureRow { imdb_id: "tt1".into(), variant: Variant::Title, values: vec![1.0, 0.0, 0.0, 0.0], label: 0 },
        ];
        let m = FeatureMatrix { layout: layout.clone(), rows };
        let manifest = FeatureManifest {
            layout,
            dimension: 0,
            rows: 0,
            split: "train".into(),
            split_seed: 1,
            split_checksum: String::new(),
            labels: vec![],
            renormalized_after_fusion: false,
            cache_manifests: vec![],
        };
        m.write(dir.path(), "train", &manifest).unwrap();
        let (back, man) = FeatureMatrix::read(dir.path(), "train").unwrap();
        assert_eq!(back, m);
        assert_eq!(man.labels, vec![1, 0]);
        assert_eq!(man.dimension, 4);
    }
}
