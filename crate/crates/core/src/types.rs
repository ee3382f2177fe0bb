//! Domain types shared by every stage of the pipeline.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer count and hidden width of the model whose activations were captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelGeometry {
    n_layers: usize,
    d_model: usize,
}

impl ModelGeometry {
    pub fn new(n_layers: usize, d_model: usize) -> Result<Self> {
        if n_layers < 2 {
            return Err(Error::InvalidGeometry(format!(
                "n_layers must be at least 2, got {n_layers}"
            )));
        }
        if d_model < 2 {
            return Err(Error::InvalidGeometry(format!(
                "d_model must be at least 2, got {d_model}"
            )));
        }
        Ok(Self { n_layers, d_model })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Length of a flattened signature map.
    pub fn feature_dim(&self) -> usize {
        self.n_layers * self.n_layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Kl,
    Js,
}

/// How per-token signature maps (or probe vectors) collapse to one per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenAggregation {
    PerTokenMean,
    LastSelected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignatureConfig {
    pub temperature: f64,
    pub divergence: DivergenceKind,
    /// `None` disables the contrast transform.
    pub contrast_alpha: Option<f64>,
    pub aggregation: TokenAggregation,
}

impl Default for SignatureConfig {
    // τ = 1 and α = 1 are arbitrary starting points, not tuned values.
    fn default() -> Self {
        Self {
            temperature: 1.0,
            divergence: DivergenceKind::Kl,
            contrast_alpha: Some(1.0),
            aggregation: TokenAggregation::PerTokenMean,
        }
    }
}

impl SignatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(alpha) = self.contrast_alpha {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "contrast_alpha must be positive, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unsplit,
}

/// One evaluation example. `label` is 1 when the model's answer was correct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub id: String,
    pub label: u8,
    pub split: Split,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory (see `DatasetManifest::resolve`).
    pub activation_path: PathBuf,
    pub token_count: usize,
}

impl InstanceRecord {
    pub fn is_correct(&self) -> bool {
        self.label == 1
    }

    /// 1 for an error, 0 for a correct answer.
    pub fn error_indicator(&self) -> u8 {
        1 - self.label
    }
}

/// Selected-token activations of one instance, `[token][layer][dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    geometry: ModelGeometry,
    token_count: usize,
    values: Vec<f32>,
}

impl ActivationStack {
    pub fn new(geometry: ModelGeometry, token_count: usize, values: Vec<f32>) -> Result<Self> {
        if token_count == 0 {
            return Err(Error::InvalidGeometry("token_count must be at least 1".into()));
        }
        let expected = token_count * geometry.n_layers() * geometry.d_model();
        if values.len() != expected {
            return Err(Error::LengthMismatch { left: expected, right: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { geometry, token_count, values })
    }

    pub fn geometry(&self) -> ModelGeometry {
        self.geometry
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, token: usize, layer: usize) -> &[f32] {
        let d = self.geometry.d_model();
        let start = (token * self.geometry.n_layers() + layer) * d;
        &self.values[start..start + d]
    }
}

/// `L × L` matrix of directed divergences, row-major: entry `(i, j)` is
/// `D(p_i ‖ p_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureMap {
    n_layers: usize,
    values: Vec<f64>,
    contrast_applied: bool,
}

impl SignatureMap {
    pub(crate) fn from_parts(n_layers: usize, values: Vec<f64>, contrast_applied: bool) -> Self {
        debug_assert_eq!(values.len(), n_layers * n_layers);
        Self { n_layers, values, contrast_applied }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_layers + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contrast_applied(&self) -> bool {
        self.contrast_applied
    }

    /// Row-major flattening; feature `f` is the pair `(f / L, f % L)`.
    pub fn flatten(self) -> FeatureVector {
        FeatureVector(self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Layer pair addressed by a flattened feature index.
pub fn feature_to_pair(feature: usize, n_layers: usize) -> (usize, usize) {
    (feature / n_layers, feature % n_layers)
}

/// `q` is the probability that the answer is correct; `u = 1 - q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    q: f64,
    u: f64,
}

impl ConfidenceScore {
    pub fn from_probability(q: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&q), "probability out of range: {q}");
        Self { q, u: 1.0 - q }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn u(&self) -> f64 {
        self.u
    }
}
