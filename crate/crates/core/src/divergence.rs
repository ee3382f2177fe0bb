//! Layer-wise softmax normalization and cross-layer divergence maps.
//!
//! Every activation row `h` becomes a distribution `softmax(h / τ)` over the
//! hidden dimension. For one token the `L` distributions yield an `L × L`
//! matrix of directed divergences, optionally squashed by `1 - exp(-α S)`.
//! All accumulation is done in `f64` regardless of the activation precision.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::types::{
    ActivationStack, DivergenceKind, FeatureVector, SignatureConfig, SignatureMap,
    TokenAggregation,
};

/// Smallest probability kept before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Rounding slack below zero tolerated (and clamped) in divergence sums.
pub const NEGATIVE_SLACK: f64 = 1e-12;

/// A strictly positive point on the probability simplex, with its logs cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    values: Vec<f64>,
    logs: Vec<f64>,
}

impl ProbabilityRow {
    /// Wraps an explicit distribution. Entries must be strictly positive and
    /// sum to 1 within `1e-12` relative.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) =
            values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveProbability { index, value });
        }
        let total: CompensatedSum = values.iter().copied().collect();
        if (total.value() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "probability row sums to {}, not 1",
                total.value()
            )));
        }
        let logs = values.iter().map(|v| v.ln()).collect();
        Ok(Self { values, logs })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `softmax(h / τ)` with max-subtraction; logs come from the log-sum-exp form.
pub fn softmax<T: Copy + Into<f64>>(h: &[T], temperature: f64) -> Result<ProbabilityRow> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if h.is_empty() {
        return Err(Error::EmptyInput("softmax over an empty row".into()));
    }
    let scaled: Vec<f64> = h.iter().map(|&v| v.into() / temperature).collect();
    if scaled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scaled.iter().map(|v| v - max).collect();
    let norm: CompensatedSum = shifted.iter().map(|v| v.exp()).collect();
    let log_norm = norm.value().ln();

    let mut values = Vec::with_capacity(h.len());
    let mut logs = Vec::with_capacity(h.len());
    for s in shifted {
        let log_p = s - log_norm;
        let p = log_p.exp();
        if p < PROBABILITY_FLOOR {
            values.push(PROBABILITY_FLOOR);
            logs.push(PROBABILITY_FLOOR.ln());
        } else {
            values.push(p);
            logs.push(log_p);
        }
    }
    Ok(ProbabilityRow { values, logs })
}

/// Softmax of every `(token, layer)` row, indexed `[token][layer]`.
pub fn softmax_rows(stack: &ActivationStack, temperature: f64) -> Result<Vec<Vec<ProbabilityRow>>> {
    (0..stack.token_count())
        .map(|t| token_rows(stack, t, temperature))
        .collect()
}

fn token_rows(stack: &ActivationStack, token: usize, temperature: f64) -> Result<Vec<ProbabilityRow>> {
    (0..stack.geometry().n_layers())
        .map(|l| softmax(stack.row(token, l), temperature))
        .collect()
}

fn check_pair(p: &ProbabilityRow, q: &ProbabilityRow) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(())
}

fn clamp_nonnegative(value: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value > -NEGATIVE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::Internal(format!("divergence evaluated to {value}")))
    }
}

/// `KL(p ‖ q) = Σ p_k (ln p_k − ln q_k)`, natural log.
pub fn kl_divergence(p: &ProbabilityRow, q: &ProbabilityRow) -> Result<f64> {
    check_pair(p, q)?;
    let acc: CompensatedSum = p
        .values
        .iter()
        .zip(&p.logs)
        .zip(&q.logs)
        .map(|((pk, lp), lq)| pk * (lp - lq))
        .collect();
    clamp_nonnegative(acc.value())
}

/// Jensen–Shannon divergence against the midpoint mixture; bounded by `ln 2`.
///
/// Each summand is written symmetrically in `p` and `q`, so swapping the
/// arguments gives a bitwise-identical result, and uses ratios to the
/// midpoint so identical rows give exactly zero.
pub fn js_divergence(p: &ProbabilityRow, q: &ProbabilityRow) -> Result<f64> {
    check_pair(p, q)?;
    let mut acc = CompensatedSum::new();
    for k in 0..p.len() {
        let (pk, qk) = (p.values[k], q.values[k]);
        let m = 0.5 * (pk + qk);
        acc.add(0.5 * (pk * (pk / m).ln() + qk * (qk / m).ln()));
    }
    Ok(clamp_nonnegative(acc.value())?.min(LN_2))
}

pub fn divergence(kind: DivergenceKind, p: &ProbabilityRow, q: &ProbabilityRow) -> Result<f64> {
    match kind {
        DivergenceKind::Kl => kl_divergence(p, q),
        DivergenceKind::Js => js_divergence(p, q),
    }
}

/// All ordered-pair divergences between layer distributions. The diagonal is
/// set to exactly zero rather than computed.
pub fn signature_map(rows: &[ProbabilityRow], kind: DivergenceKind) -> Result<SignatureMap> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidGeometry(format!(
            "signature map needs at least 2 layers, got {n}"
        )));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[i * n + j] = divergence(kind, &rows[i], &rows[j])?;
            }
        }
    }
    Ok(SignatureMap::from_parts(n, values, false))
}

/// Largest `f64` strictly below one; the contrast output saturates here.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `1 − exp(−α x)`, saturating at the largest double below 1 so outputs stay
/// in `[0, 1)`.
#[inline]
pub fn contrast(x: f64, alpha: f64) -> f64 {
    (-(-alpha * x).exp_m1()).min(BELOW_ONE)
}

/// Element-wise [`contrast`].
pub fn contrast_transform(map: &SignatureMap, alpha: f64) -> Result<SignatureMap> {
    if map.contrast_applied() {
        return Err(Error::AlreadyContrasted);
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("contrast alpha must be positive, got {alpha}")));
    }
    let values = map
        .values()
        .iter()
        .map(|&x| contrast(x, alpha))
        .collect();
    Ok(SignatureMap::from_parts(map.n_layers(), values, true))
}

/// Signature features of one instance.
///
/// Per-token raw divergence maps are aggregated first (mean or last token);
/// the contrast transform, when configured, is applied to the aggregate.
pub fn instance_features(stack: &ActivationStack, cfg: &SignatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let n = stack.geometry().n_layers();
    let raw = match cfg.aggregation {
        TokenAggregation::LastSelected => {
            let rows = token_rows(stack, stack.token_count() - 1, cfg.temperature)?;
            signature_map(&rows, cfg.divergence)?
        }
        TokenAggregation::PerTokenMean => {
            let mut sum = vec![0.0; n * n];
            for t in 0..stack.token_count() {
                let rows = token_rows(stack, t, cfg.temperature)?;
                let map = signature_map(&rows, cfg.divergence)?;
                for (acc, v) in sum.iter_mut().zip(map.values()) {
                    *acc += v;
                }
            }
            let count = stack.token_count() as f64;
            sum.iter_mut().for_each(|v| *v /= count);
            SignatureMap::from_parts(n, sum, false)
        }
    };
    let map = match cfg.contrast_alpha {
        Some(alpha) => contrast_transform(&raw, alpha)?,
        None => raw,
    };
    Ok(map.flatten())
}
