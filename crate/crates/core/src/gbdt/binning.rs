//! Per-feature quantile binning.

use serde::{Deserialize, Serialize};

/// Split points for one feature. Bin `b` holds values in
/// `(thresholds[b-1], thresholds[b]]`; the last bin is open above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub thresholds: Vec<f64>,
}

impl FeatureBins {
    /// Builds at most `n_bins - 1` thresholds from the sorted distinct values.
    ///
    /// When there are no more distinct values than bins, every gap between
    /// neighbouring distinct values gets its midpoint as a threshold.
    /// Otherwise cuts are placed where the cumulative count crosses each
    /// `k / n_bins` quantile.
    pub fn fit(values: &[f64], n_bins: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for v in sorted {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        if distinct.len() <= 1 {
            return Self { thresholds: Vec::new() };
        }
        let thresholds = if distinct.len() <= n_bins {
            distinct.windows(2).map(|w| midpoint(w[0].0, w[1].0)).collect()
        } else {
            let total = values.len() as f64;
            let mut cuts = Vec::with_capacity(n_bins - 1);
            let mut cumulative = 0usize;
            let mut next_cut = 1usize;
            for w in distinct.windows(2) {
                cumulative += w[0].1;
                if next_cut >= n_bins {
                    break;
                }
                if cumulative as f64 >= total * next_cut as f64 / n_bins as f64 {
                    cuts.push(midpoint(w[0].0, w[1].0));
                    while next_cut < n_bins
                        && cumulative as f64 >= total * next_cut as f64 / n_bins as f64
                    {
                        next_cut += 1;
                    }
                }
            }
            cuts
        };
        Self { thresholds }
    }

    pub fn n_bins(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Number of thresholds strictly below `value`.
    #[inline]
    pub fn bin(&self, value: f64) -> u8 {
        self.thresholds.partition_point(|t| *t < value) as u8
    }
}

/// Midpoint of two neighbouring distinct values, guaranteed to satisfy
/// `lo <= m < hi` so that `lo` goes left and `hi` goes right.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) * 0.5;
    if m >= hi || !m.is_finite() {
        lo
    } else {
        m
    }
}

/// Column-major bin indices for a training matrix.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub bins: Vec<FeatureBins>,
    /// `columns[f][row]`
    pub columns: Vec<Vec<u8>>,
}

impl BinnedMatrix {
    pub fn fit(rows: &[&[f64]], n_bins: usize) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut bins = Vec::with_capacity(dim);
        let mut columns = Vec::with_capacity(dim);
        for f in 0..dim {
            let column: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            let fb = FeatureBins::fit(&column, n_bins);
            columns.push(column.iter().map(|&v| fb.bin(v)).collect());
            bins.push(fb);
        }
        Self { bins, columns }
    }

    pub fn n_features(&self) -> usize {
        self.bins.len()
    }
}
