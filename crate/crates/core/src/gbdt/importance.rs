//! Split-gain feature importance and its aggregation by layer distance.
//!
//! Gains are snapped onto a dyadic grid `2^k` chosen so that the total is
//! below `2^50` grid units. Every partial sum of grid values is then exactly
//! representable, which makes totals identical no matter how the entries are
//! grouped or ordered (per feature, per node, or per layer distance).

use crate::error::{Error, Result};
use crate::gbdt::TreeEnsemble;

/// Headroom kept between the grid-scaled total and the 53-bit mantissa.
const GRID_BITS: i32 = 50;

/// Grid spacing for a set of nonnegative values summing to `total`.
pub fn grid_quantum(total: f64) -> f64 {
    if !(total > 0.0 && total.is_finite()) {
        return 1.0;
    }
    let exponent = total.log2().ceil() as i32 + 1 - GRID_BITS;
    2f64.powi(exponent.max(-1074))
}

/// Nearest multiple of `quantum` (a power of two).
pub fn snap_to_grid(value: f64, quantum: f64) -> f64 {
    (value / quantum).round() * quantum
}

/// Total split gain per feature, viewed as an `L × L` matrix when the feature
/// space is a flattened signature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    gains: Vec<f64>,
    quantum: f64,
}

impl ImportanceMap {
    /// Wraps arbitrary nonnegative gains, snapping them to a common grid.
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if let Some(bad) = gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(Error::InvalidConfig(format!("importance gains must be nonnegative, got {bad}")));
        }
        let quantum = grid_quantum(gains.iter().sum());
        let gains = gains.into_iter().map(|g| snap_to_grid(g, quantum)).collect();
        Ok(Self { gains, quantum })
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Grid spacing every entry is a multiple of.
    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    pub fn total(&self) -> f64 {
        self.gains.iter().sum()
    }

    /// Row-major `L × L` view; `None` if the length is not `L²`.
    pub fn as_matrix(&self, n_layers: usize) -> Option<Vec<&[f64]>> {
        (self.gains.len() == n_layers * n_layers && n_layers > 0)
            .then(|| self.gains.chunks(n_layers).collect())
    }
}

/// Sum of split gains per feature over every internal node of every tree.
pub fn feature_importance(model: &TreeEnsemble) -> ImportanceMap {
    let mut nodes = Vec::new();
    for tree in &model.trees {
        tree.for_each_split(&mut |feature, _, gain| nodes.push((feature, gain.max(0.0))));
    }
    let quantum = grid_quantum(nodes.iter().map(|(_, g)| g).sum());
    let mut gains = vec![0.0; model.feature_dim];
    for (feature, gain) in nodes {
        gains[feature] += snap_to_grid(gain, quantum);
    }
    ImportanceMap { gains, quantum }
}

/// `out[d] = Σ_{|i-j| = d} gains[i·L + j]` for `d` in `0..L`.
pub fn importance_by_distance(imp: &ImportanceMap, n_layers: usize) -> Result<Vec<f64>> {
    if imp.gains.len() != n_layers * n_layers {
        return Err(Error::DimensionMismatch {
            expected: n_layers * n_layers,
            found: imp.gains.len(),
        });
    }
    let mut out = vec![0.0; n_layers];
    for (f, g) in imp.gains.iter().enumerate() {
        let (i, j) = (f / n_layers, f % n_layers);
        out[i.abs_diff(j)] += g;
    }
    Ok(out)
}
