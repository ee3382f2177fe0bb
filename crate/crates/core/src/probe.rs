//! Linear probe on raw hidden states: the baseline the signatures are
//! compared against.
//!
//! An L2-regularized logistic regression fit by full-batch gradient descent
//! with Armijo backtracking, started from zero weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus};
use crate::types::{ActivationStack, ConfidenceScore, TokenAggregation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// `None` selects the middle layer `⌊L/2⌋`.
    pub layer_index: Option<usize>,
    pub l2_strength: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            layer_index: None,
            l2_strength: 1e-2,
            max_iterations: 2000,
            tolerance: 1e-6,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_strength.is_finite() && self.l2_strength >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l2_strength must be nonnegative, got {}",
                self.l2_strength
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    pub fn resolve_layer(&self, n_layers: usize) -> Result<usize> {
        let index = self.layer_index.unwrap_or(n_layers / 2);
        if index >= n_layers {
            return Err(Error::LayerOutOfRange { index, n_layers });
        }
        Ok(index)
    }
}

/// Hidden state of one layer, for the last selected token or averaged over
/// all selected tokens.
pub fn extract_probe_features(
    stack: &ActivationStack,
    layer_index: usize,
    aggregation: TokenAggregation,
) -> Result<Vec<f64>> {
    let n_layers = stack.geometry().n_layers();
    if layer_index >= n_layers {
        return Err(Error::LayerOutOfRange { index: layer_index, n_layers });
    }
    let last = stack.token_count() - 1;
    Ok(match aggregation {
        TokenAggregation::LastSelected => {
            stack.row(last, layer_index).iter().map(|&v| f64::from(v)).collect()
        }
        TokenAggregation::PerTokenMean => {
            let mut sum = vec![0.0; stack.geometry().d_model()];
            for t in 0..stack.token_count() {
                for (acc, &v) in sum.iter_mut().zip(stack.row(t, layer_index)) {
                    *acc += f64::from(v);
                }
            }
            let count = stack.token_count() as f64;
            sum.into_iter().map(|v| v / count).collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Per-dimension mean and population standard deviation; constant
    /// dimensions get scale 1.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeModel {
    pub layer_index: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardization: Option<Standardization>,
}

impl ProbeModel {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string(self).expect("probe serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ProbeModel =
            serde_json::from_str(text).map_err(|e| Error::BadModelFile(e.to_string()))?;
        let finite = model.weights.iter().all(|w| w.is_finite()) && model.bias.is_finite();
        if !finite {
            return Err(Error::BadModelFile("non-finite probe parameters".into()));
        }
        if let Some(s) = &model.standardization {
            if s.mean.len() != model.weights.len() || s.scale.len() != model.weights.len() {
                return Err(Error::BadModelFile("standardization length mismatch".into()));
            }
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

/// Result of [`train_probe`]. A run that exhausts `max_iterations` still
/// yields a usable model, with `converged = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub model: ProbeModel,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl ProbeFit {
    pub fn warning(&self) -> Option<Error> {
        (!self.converged).then_some(Error::NoConvergence {
            iterations: self.iterations,
            gradient_norm: self.gradient_norm,
        })
    }
}

fn linear(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

/// `mean(ln(1 + e^s) − c s) + (λ/2)‖w‖²` with `s = w·x + b`; the bias is
/// not penalized.
pub fn probe_objective(weights: &[f64], bias: f64, xs: &[Vec<f64>], ys: &[f64], l2: f64) -> f64 {
    let n = xs.len() as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &c)| {
            let s = linear(weights, bias, x);
            softplus(s) - c * s
        })
        .sum();
    data / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`probe_objective`] as `(∂w, ∂b)`.
pub fn probe_gradient(
    weights: &[f64],
    bias: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &c) in xs.iter().zip(ys) {
        let r = sigmoid(linear(weights, bias, x)) - c;
        gb += r;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

const ARMIJO: f64 = 1e-4;
const MAX_STEP: f64 = 1e6;

/// Fits the probe on `features` (one row per instance) and 0/1 `labels`.
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[f64],
    layer_index: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyTrain);
    }
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
    }
    let positives = labels.iter().filter(|&&c| c == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }

    let standardization = cfg.standardize.then(|| {
        let refs: Vec<&[f64]> = features.iter().map(|r| r.as_slice()).collect();
        Standardization::fit(&refs)
    });
    let xs: Vec<Vec<f64>> = match &standardization {
        Some(s) => features.iter().map(|r| s.apply(r)).collect(),
        None => features.to_vec(),
    };
    let l2 = cfg.l2_strength;

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut value = probe_objective(&w, b, &xs, labels, l2);
    let mut step = 1.0;
    let mut iterations = 0;
    let (mut gw, mut gb) = probe_gradient(&w, b, &xs, labels, l2);
    let mut norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
    while norm >= cfg.tolerance && iterations < cfg.max_iterations {
        iterations += 1;
        let sq = norm * norm;
        loop {
            let w_try: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let b_try = b - step * gb;
            let v_try = probe_objective(&w_try, b_try, &xs, labels, l2);
            if v_try <= value - ARMIJO * step * sq {
                w = w_try;
                b = b_try;
                value = v_try;
                break;
            }
            step *= 0.5;
            if step < f64::MIN_POSITIVE {
                // No representable decrease left; the iterate is as good as it gets.
                let model = finish(layer_index, w, b, standardization);
                return Ok(ProbeFit { model, converged: false, iterations, gradient_norm: norm });
            }
        }
        step = (step * 2.0).min(MAX_STEP);
        (gw, gb) = probe_gradient(&w, b, &xs, labels, l2);
        norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
    }
    let converged = norm < cfg.tolerance;
    Ok(ProbeFit {
        model: finish(layer_index, w, b, standardization),
        converged,
        iterations,
        gradient_norm: norm,
    })
}

fn finish(layer_index: usize, weights: Vec<f64>, bias: f64, standardization: Option<Standardization>) -> ProbeModel {
    ProbeModel { layer_index, weights, bias, standardization }
}

/// `q = σ(w·x + b)` after the model's standardization, if any.
pub fn predict_probe(model: &ProbeModel, x: &[f64]) -> Result<ConfidenceScore> {
    if x.len() != model.weights.len() {
        return Err(Error::DimensionMismatch { expected: model.weights.len(), found: x.len() });
    }
    let s = match &model.standardization {
        Some(st) => linear(&model.weights, model.bias, &st.apply(x)),
        None => linear(&model.weights, model.bias, x),
    };
    Ok(ConfidenceScore::from_probability(sigmoid(s)))
}
