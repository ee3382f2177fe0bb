//! Histogram gradient-boosted decision trees for binary classification.
//!
//! Logistic loss, Newton leaf values `-ΣG / (ΣH + λ)` shrunk by the learning
//! rate, leaf-wise growth, and split candidates restricted to quantile bin
//! boundaries computed once on the training features. Training is
//! deterministic: histograms are accumulated per feature by a single worker
//! in row order, so the thread count never changes the model bytes.

pub mod binning;
pub mod importance;
pub mod tree;

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureTable;
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus, CompensatedSum};
use crate::seed::{derive_seed, hex_digest};
use crate::types::{ConfidenceScore, SignatureConfig, Split};

pub use binning::{BinnedMatrix, FeatureBins};
pub use importance::{feature_importance, importance_by_distance, ImportanceMap};
pub use tree::{split_gain, TreeNode};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub l2_lambda: f64,
    pub n_bins: usize,
    pub seed: u64,
    pub bagging_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            learning_rate: 0.05,
            max_leaves: 31,
            min_samples_leaf: 20,
            l2_lambda: 1.0,
            n_bins: 256,
            seed: 0,
            bagging_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_trees == 0 {
            return fail("n_trees must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_leaves < 2 {
            return fail(format!("max_leaves must be at least 2, got {}", self.max_leaves));
        }
        if self.min_samples_leaf == 0 {
            return fail("min_samples_leaf must be positive".into());
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return fail(format!("l2_lambda must be nonnegative, got {}", self.l2_lambda));
        }
        if !(2..=256).contains(&self.n_bins) {
            return fail(format!("n_bins must lie in [2, 256], got {}", self.n_bins));
        }
        if !(self.bagging_fraction > 0.0 && self.bagging_fraction <= 1.0) {
            return fail(format!(
                "bagging_fraction must lie in (0, 1], got {}",
                self.bagging_fraction
            ));
        }
        Ok(())
    }
}

/// Per-example logistic loss `ln(1 + e^F) - c F`.
#[inline]
pub fn logistic_loss(score: f64, label: f64) -> f64 {
    softplus(score) - label * score
}

/// Gradient and hessian of [`logistic_loss`] with respect to the score.
#[inline]
pub fn logistic_grad_hess(score: f64, label: f64) -> (f64, f64) {
    let p = sigmoid(score);
    (p - label, p * (1.0 - p))
}

pub fn mean_logistic_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let acc: CompensatedSum =
        scores.iter().zip(labels).map(|(&s, &c)| logistic_loss(s, c)).collect();
    acc.value() / scores.len() as f64
}

/// Largest double strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeEnsemble {
    pub version: u32,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    pub feature_dim: usize,
    pub trees: Vec<TreeNode>,
    pub config: TrainConfig,
    pub fingerprint: String,
    /// Feature-extraction settings the model was trained with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureConfig>,
}

impl TreeEnsemble {
    pub fn raw_score(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, found: z.len() });
        }
        Ok(self.base_score + self.trees.iter().map(|t| t.predict(z)).sum::<f64>())
    }

    /// `q = σ(base + Σ trees)`, kept strictly inside `(0, 1)`.
    pub fn predict(&self, z: &[f64]) -> Result<ConfidenceScore> {
        let q = sigmoid(self.raw_score(z)?).clamp(f64::MIN_POSITIVE, BELOW_ONE);
        Ok(ConfidenceScore::from_probability(q))
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string(self).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TreeEnsemble =
            serde_json::from_str(text).map_err(|e| Error::BadModelFile(e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(Error::BadModelFile(format!("unsupported version {}", model.version)));
        }
        if !model.base_score.is_finite() {
            return Err(Error::BadModelFile("non-finite base score".into()));
        }
        for tree in &model.trees {
            tree.validate(model.feature_dim).map_err(Error::BadModelFile)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Model plus the mean train loss after the base score and after each round.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TreeEnsemble,
    pub loss_history: Vec<f64>,
}

/// Trains on the `Train` rows of `table`.
pub fn train(table: &FeatureTable, cfg: &TrainConfig) -> Result<TreeEnsemble> {
    Ok(train_with_history(table, cfg)?.model)
}

pub fn train_with_history(table: &FeatureTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let rows: Vec<&[f64]> = table.rows_in(Split::Train).map(|r| r.features.as_slice()).collect();
    let labels: Vec<f64> = table.rows_in(Split::Train).map(|r| f64::from(r.label)).collect();
    train_matrix(&rows, &labels, cfg)
}

fn data_fingerprint(rows: &[&[f64]], labels: &[f64], cfg: &TrainConfig) -> String {
    let mut bytes = serde_json::to_vec(cfg).expect("config serializes");
    for (row, label) in rows.iter().zip(labels) {
        for v in row.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&label.to_le_bytes());
    }
    hex_digest(&bytes)[..32].to_string()
}

/// Boosting on a dense row-major matrix with 0/1 labels.
pub fn train_matrix(rows: &[&[f64]], labels: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyTrain);
    }
    let feature_dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != feature_dim) {
        return Err(Error::DimensionMismatch { expected: feature_dim, found: bad.len() });
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteInput);
    }
    let positives = labels.iter().filter(|&&c| c == 1.0).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    let prevalence = positives as f64 / n as f64;
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let data = BinnedMatrix::fit(rows, cfg.n_bins);
    let params = tree::GrowParams {
        max_leaves: cfg.max_leaves,
        min_samples_leaf: cfg.min_samples_leaf,
        lambda: cfg.l2_lambda,
        shrinkage: cfg.learning_rate,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "bagging"));
    let bag_size = ((n as f64 * cfg.bagging_fraction).round() as usize).clamp(1, n);

    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut loss_history = vec![mean_logistic_loss(&scores, labels)];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            (grad[i], hess[i]) = logistic_grad_hess(scores[i], labels[i]);
        }
        let bag: Vec<u32> = if bag_size == n {
            (0..n as u32).collect()
        } else {
            let mut picked: Vec<u32> =
                sample(&mut rng, n, bag_size).into_iter().map(|i| i as u32).collect();
            picked.sort_unstable();
            picked
        };
        let tree = tree::grow_tree(&data, bag, &grad, &hess, &params);
        for (score, row) in scores.iter_mut().zip(rows) {
            *score += tree.predict(row);
        }
        loss_history.push(mean_logistic_loss(&scores, labels));
        trees.push(tree);
    }

    let model = TreeEnsemble {
        version: MODEL_VERSION,
        base_score,
        feature_dim,
        trees,
        config: *cfg,
        fingerprint: data_fingerprint(rows, labels, cfg),
        signature: None,
    };
    Ok(TrainOutcome { model, loss_history })
}
