//! Threshold-free error detection and probabilistic quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ConfidenceScore;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::EmptyInput("no instances to score".into()));
    }
    Ok(())
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Average precision of ranking positives (errors) by descending score.
///
/// `AP = Σ (R_n − R_{n−1}) · P_n` over the thresholds induced by the
/// distinct scores; tied scores form one threshold. No interpolation.
pub fn auprc(scores: &[f64], positives: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), positives.len())?;
    check_finite(scores)?;
    let total_pos = positives.iter().filter(|&&p| p == 1).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(positives[order[i]] == 1);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `1 − mean((q − c)²)`; higher is better.
pub fn brier_score(q: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(q.len(), labels.len())?;
    if let Some(bad) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidConfig(format!("probability {bad} outside [0, 1]")));
    }
    let sse: f64 = q.iter().zip(labels).map(|(&p, &c)| (p - f64::from(c)).powi(2)).sum();
    Ok(1.0 - sse / q.len() as f64)
}

/// Mann–Whitney AUC: probability a positive outranks a negative, ties ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps mid-ranks integral.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let start = i;
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            i += 1;
        }
        // Ranks start+1 ..= i share the mid-rank (start + 1 + i) / 2.
        let mid_x2 = (start + 1 + i) as u128;
        let pos_in_group = order[start..i].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum_x2 += mid_x2 * pos_in_group;
    }
    let n_pos_u = n_pos as u128;
    let u_x2 = rank_sum_x2 - n_pos_u * (n_pos_u + 1);
    Ok(u_x2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    /// Errors as the positive class, ranked by uncertainty.
    pub auprc: f64,
    /// `1 − MSE` of `q` against correctness.
    pub brier_score: f64,
    pub auc: f64,
    pub n_test: usize,
    pub error_rate: f64,
}

/// Scores one evaluation set. `correct[i]` is 1 when instance `i` was answered
/// correctly.
pub fn evaluate(scores: &[ConfidenceScore], correct: &[u8]) -> Result<MetricBundle> {
    check_lengths(scores.len(), correct.len())?;
    let u: Vec<f64> = scores.iter().map(|s| s.u()).collect();
    let q: Vec<f64> = scores.iter().map(|s| s.q()).collect();
    let errors: Vec<u8> = correct.iter().map(|&c| 1 - c).collect();
    let n_err = errors.iter().filter(|&&e| e == 1).count();
    Ok(MetricBundle {
        auprc: auprc(&u, &errors)?,
        brier_score: brier_score(&q, correct)?,
        auc: auc(&u, &errors)?,
        n_test: scores.len(),
        error_rate: n_err as f64 / scores.len() as f64,
    })
}
