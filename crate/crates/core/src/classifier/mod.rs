//! Class-weighted L2-regularized logistic regression.

mod lbfgs;
mod objective;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FeatureLayout;

pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult, NonFiniteObjective, Termination};
pub use objective::{loss_and_gradient, sigmoid, softplus_neg, LossGrad};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("class {0} has no samples")]
    EmptyClass(u8),
    #[error("non-finite value or invalid label in training input")]
    NonFiniteInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("objective diverged after {iterations} iterations (last finite objective {last_objective})")]
    Diverged { iterations: usize, last_objective: f64 },
    #[error("invalid classifier config: {0}")]
    BadConfig(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    Balanced,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogRegConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub class_weighting: ClassWeighting,
    pub lbfgs_memory: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { c: 1.0, max_iter: 5000, tol: 1e-4, class_weighting: ClassWeighting::Balanced, lbfgs_memory: 10 }
    }
}

impl LogRegConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(ClassifierError::BadConfig(format!("C must be positive, got {}", self.c)));
        }
        if self.max_iter == 0 {
            return Err(ClassifierError::BadConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(ClassifierError::BadConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Balanced weights `N / (2 N_c)` as `(w_pos, w_neg)`.
pub fn compute_class_weights(labels: &[u8]) -> Result<(f64, f64), ClassifierError> {
    if labels.iter().any(|&l| l > 1) {
        return Err(ClassifierError::NonFiniteInput);
    }
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(ClassifierError::EmptyClass(1));
    }
    if neg == 0 {
        return Err(ClassifierError::EmptyClass(0));
    }
    Ok((n / (2.0 * pos as f64), n / (2.0 * neg as f64)))
}

/// Raw optimizer output in full precision.
#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub theta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub objective: f64,
    pub grad_sup: f64,
    pub termination: Termination,
    pub class_weights: (f64, f64),
    pub history: Vec<f64>,
}

/// Fits the model from the origin with L-BFGS. Deterministic given its inputs.
pub fn train_logreg(x: ArrayView2<f64>, y: &[u8], config: &LogRegConfig) -> Result<LogRegFit, ClassifierError> {
    config.validate()?;
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(ClassifierError::DimensionMismatch { expected: n, got: y.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFiniteInput);
    }
    let class_weights = compute_class_weights(y)?;
    let (w_pos, w_neg) = match config.class_weighting {
        ClassWeighting::Balanced => class_weights,
        ClassWeighting::None => (1.0, 1.0),
    };
    let sample_weights: Vec<f64> = y.iter().map(|&l| if l == 1 { w_pos } else { w_neg }).collect();
    let c = config.c;
    let obj = |params: &[f64], grad: &mut [f64]| {
        let theta = ArrayView1::from(&params[..p]);
        let (f, gb) = objective::evaluate(theta, params[p], x, y, &sample_weights, c, &mut grad[..p]);
        grad[p] = gb;
        f
    };
    let opts = LbfgsOptions { memory: config.lbfgs_memory, max_iter: config.max_iter, gtol: config.tol, ..Default::default() };
    let res = minimize(obj, vec![0.0; p + 1], &opts)
        .map_err(|e| ClassifierError::Diverged { iterations: e.iterations, last_objective: f64::NAN })?;
    if !res.f.is_finite() {
        let last = res.history.iter().rev().copied().find(|v| v.is_finite()).unwrap_or(f64::NAN);
        return Err(ClassifierError::Diverged { iterations: res.iterations, last_objective: last });
    }
    let mut theta = res.x;
    let bias = theta.pop().expect("parameter vector holds the bias");
    Ok(LogRegFit {
        theta,
        bias,
        iterations: res.iterations,
        objective: res.f,
        grad_sup: res.grad_sup,
        termination: res.termination,
        class_weights: (w_pos, w_neg),
        history: res.history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub split_seed: u64,
    pub iterations: usize,
    pub final_objective: f64,
    pub grad_sup: f64,
    pub termination: Termination,
    pub w_pos: f64,
    pub w_neg: f64,
    pub n_train: usize,
    pub line_search: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// Stored as f32; predictions use exactly these values.
    pub weights: Vec<f32>,
    pub bias: f64,
    pub threshold: f64,
    pub threshold_tuned: bool,
    pub config: LogRegConfig,
    pub layout: FeatureLayout,
    pub training: TrainingInfo,
    /// Free-form provenance such as config hash and input checksums.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layout: FeatureLayout,
    dimension: usize,
    weights_f32_le_b64: String,
    bias: f64,
    threshold: f64,
    threshold_tuned: bool,
    config: LogRegConfig,
    training: TrainingInfo,
    provenance: BTreeMap<String, String>,
    checksum: String,
}

impl LogRegModel {
    pub fn from_fit(fit: &LogRegFit, config: LogRegConfig, layout: FeatureLayout, split_seed: u64, n_train: usize) -> Result<Self, ClassifierError> {
        if fit.theta.len() != layout.dimension() {
            return Err(ClassifierError::DimensionMismatch { expected: layout.dimension(), got: fit.theta.len() });
        }
        Ok(Self {
            weights: fit.theta.iter().map(|&v| v as f32).collect(),
            bias: fit.bias,
            threshold: DEFAULT_THRESHOLD,
            threshold_tuned: false,
            config,
            layout,
            training: TrainingInfo {
                split_seed,
                iterations: fit.iterations,
                final_objective: fit.objective,
                grad_sup: fit.grad_sup,
                termination: fit.termination,
                w_pos: fit.class_weights.0,
                w_neg: fit.class_weights.1,
                n_train,
                line_search: "strong-wolfe c1=1e-4 c2=0.9 cubic max_trials=20, backtracking fallback".into(),
            },
            provenance: BTreeMap::new(),
        })
    }

    pub fn set_threshold(&mut self, tau: f64) {
        self.threshold = tau;
        self.threshold_tuned = true;
    }

    pub fn decision_value(&self, row: &[f32]) -> Result<f64, ClassifierError> {
        if row.len() != self.weights.len() {
            return Err(ClassifierError::DimensionMismatch { expected: self.weights.len(), got: row.len() });
        }
        let z = self.weights.iter().zip(row).map(|(&w, &x)| w as f64 * x as f64).sum::<f64>() + self.bias;
        Ok(z)
    }

    fn to_file(&self) -> ModelFile {
        let bytes: Vec<u8> = self.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            layout: self.layout.clone(),
            dimension: self.weights.len(),
            weights_f32_le_b64: B64.encode(bytes),
            bias: self.bias,
            threshold: self.threshold,
            threshold_tuned: self.threshold_tuned,
            config: self.config,
            training: self.training.clone(),
            provenance: self.provenance.clone(),
            checksum: String::new(),
        }
    }

    /// SHA-256 of the serialized model with an empty checksum field.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("model serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> String {
        let mut file = self.to_file();
        file.checksum = self.checksum();
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ClassifierError::Corrupt(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::Corrupt(format!("unsupported model version {}", file.format_version)));
        }
        let bytes = B64
            .decode(&file.weights_f32_le_b64)
            .map_err(|e| ClassifierError::Corrupt(format!("weight block: {e}")))?;
        if bytes.len() != 4 * file.dimension || file.dimension != file.layout.dimension() {
            return Err(ClassifierError::Corrupt(format!(
                "weight block holds {} bytes for dimension {} (layout {})",
                bytes.len(),
                file.dimension,
                file.layout.dimension()
            )));
        }
        let weights = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let model = Self {
            weights,
            bias: file.bias,
            threshold: file.threshold,
            threshold_tuned: file.threshold_tuned,
            config: file.config,
            layout: file.layout,
            training: file.training,
            provenance: file.provenance,
        };
        let expected = model.checksum();
        if expected != file.checksum {
            return Err(ClassifierError::Corrupt(format!("checksum mismatch: stored {}, computed {expected}", file.checksum)));
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<(), ClassifierError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `sigma(w . x + b)`.
pub fn predict_proba(model: &LogRegModel, row: &[f32]) -> Result<f64, ClassifierError> {
    Ok(sigmoid(model.decision_value(row)?))
}

/// 1 iff the probability reaches the model threshold.
pub fn predict_label(model: &LogRegModel, row: &[f32]) -> Result<u8, ClassifierError> {
    Ok(u8::from(predict_proba(model, row)? >= model.threshold))
}

/// Copies f32 feature rows into a dense f64 matrix.
pub fn design_matrix<R: AsRef<[f32]>>(rows: &[R], dim: usize) -> Result<ndarray::Array2<f64>, ClassifierError> {
    let mut x = ndarray::Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(ClassifierError::DimensionMismatch { expected: dim, got: r.len() });
        }
        x.row_mut(i).iter_mut().zip(r).for_each(|(a, &b)| *a = b as f64);
    }
    Ok(x)
}
