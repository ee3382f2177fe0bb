//! Leaf-wise growth of one regression tree on gradient/hessian statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gbdt::binning::BinnedMatrix;

/// Smallest hessian mass allowed in a child.
pub const MIN_CHILD_HESSIAN: f64 = 1e-3;

/// Relative tolerance under which two split gains count as tied.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        leaf: f64,
    },
}

impl TreeNode {
    /// Log-odds increment for `z`; `z[feature] <= threshold` goes left.
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf } => return *leaf,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    node = if z[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Visits internal nodes depth-first, left before right.
    pub fn for_each_split(&self, f: &mut impl FnMut(usize, f64, f64)) {
        if let TreeNode::Split { feature, threshold, gain, left, right } = self {
            f(*feature, *threshold, *gain);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub(crate) fn validate(&self, feature_dim: usize) -> Result<(), String> {
        match self {
            TreeNode::Leaf { leaf } if leaf.is_finite() => Ok(()),
            TreeNode::Leaf { leaf } => Err(format!("non-finite leaf value {leaf}")),
            TreeNode::Split { feature, threshold, gain, left, right } => {
                if *feature >= feature_dim {
                    return Err(format!("feature {feature} out of range {feature_dim}"));
                }
                if !threshold.is_finite() || !gain.is_finite() {
                    return Err("non-finite threshold or gain".into());
                }
                left.validate(feature_dim)?;
                right.validate(feature_dim)
            }
        }
    }
}

/// Half the reduction in regularized second-order loss from splitting a node.
#[inline]
pub fn split_gain(g_left: f64, h_left: f64, g_right: f64, h_right: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(g_left, h_left) + score(g_right, h_right)
        - score(g_left + g_right, h_left + h_right))
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    /// Multiplier applied to every Newton leaf value.
    pub shrinkage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub bin: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct BinStats {
    g: f64,
    h: f64,
    n: usize,
}

/// Best split of the rows in `rows`.
///
/// All valid candidates (both children with at least `min_samples_leaf`
/// rows and `MIN_CHILD_HESSIAN` hessian) are scored; among those within
/// `GAIN_TIE_TOLERANCE` of the maximum the lowest feature, then the lowest
/// threshold, wins. Returns `None` when no candidate has positive gain.
pub fn best_split(
    data: &BinnedMatrix,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
) -> Option<SplitChoice> {
    if rows.len() < 2 * params.min_samples_leaf {
        return None;
    }
    let per_feature: Vec<Vec<(usize, f64)>> = (0..data.n_features())
        .into_par_iter()
        .map(|f| feature_candidates(data, f, rows, grad, hess, params))
        .collect();

    let max_gain = per_feature
        .iter()
        .flatten()
        .map(|&(_, g)| g)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_gain > 0.0) {
        return None;
    }
    let floor = max_gain - GAIN_TIE_TOLERANCE * max_gain.abs().max(1.0);
    per_feature.iter().enumerate().find_map(|(feature, cands)| {
        cands
            .iter()
            .find(|(_, g)| *g >= floor)
            .map(|&(bin, gain)| SplitChoice { feature, bin, gain })
    })
}

fn feature_candidates(
    data: &BinnedMatrix,
    feature: usize,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
) -> Vec<(usize, f64)> {
    let n_bins = data.bins[feature].n_bins();
    if n_bins < 2 {
        return Vec::new();
    }
    let column = &data.columns[feature];
    let mut hist = vec![BinStats::default(); n_bins];
    for &r in rows {
        let r = r as usize;
        let s = &mut hist[column[r] as usize];
        s.g += grad[r];
        s.h += hess[r];
        s.n += 1;
    }
    let (g_total, h_total, n_total) =
        hist.iter().fold((0.0, 0.0, 0), |(g, h, n), s| (g + s.g, h + s.h, n + s.n));

    let mut out = Vec::new();
    let (mut g_left, mut h_left, mut n_left) = (0.0, 0.0, 0usize);
    for (bin, s) in hist.iter().enumerate().take(n_bins - 1) {
        g_left += s.g;
        h_left += s.h;
        n_left += s.n;
        let n_right = n_total - n_left;
        if n_left < params.min_samples_leaf || n_right < params.min_samples_leaf {
            continue;
        }
        let (g_right, h_right) = (g_total - g_left, h_total - h_left);
        if h_left < MIN_CHILD_HESSIAN || h_right < MIN_CHILD_HESSIAN {
            continue;
        }
        out.push((bin, split_gain(g_left, h_left, g_right, h_right, params.lambda)));
    }
    out
}

struct OpenLeaf {
    rows: Vec<u32>,
    slot: usize,
    best: Option<SplitChoice>,
}

enum Slot {
    Pending,
    Leaf(f64),
    Split { choice: SplitChoice, threshold: f64, left: usize, right: usize },
}

/// Grows one tree, best-gain leaf first, until `max_leaves` leaves exist or
/// no leaf has a positive-gain split.
pub fn grow_tree(
    data: &BinnedMatrix,
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
) -> TreeNode {
    let mut slots = vec![Slot::Pending];
    let root_best = best_split(data, &rows, grad, hess, params);
    let mut open = vec![OpenLeaf { rows, slot: 0, best: root_best }];
    let mut n_leaves = 1;

    while n_leaves < params.max_leaves {
        // Highest gain; earliest-created leaf on exact ties.
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, best)) if best >= g => acc,
                _ => Some((i, g)),
            });
        let Some((index, _)) = pick else { break };
        let leaf = open.swap_remove(index);
        let choice = leaf.best.expect("picked leaf has a split");
        let column = &data.columns[choice.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.into_iter().partition(|&r| (column[r as usize] as usize) <= choice.bin);

        let left_slot = slots.len();
        slots.push(Slot::Pending);
        slots.push(Slot::Pending);
        slots[leaf.slot] = Slot::Split {
            choice,
            threshold: data.bins[choice.feature].thresholds[choice.bin],
            left: left_slot,
            right: left_slot + 1,
        };
        for (rows, slot) in [(left_rows, left_slot), (right_rows, left_slot + 1)] {
            let best = best_split(data, &rows, grad, hess, params);
            open.push(OpenLeaf { rows, slot, best });
        }
        // Keep creation order so ties resolve to the oldest leaf.
        open.sort_by_key(|l| l.slot);
        n_leaves += 1;
    }

    for leaf in &open {
        let (g, h) = leaf
            .rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]));
        slots[leaf.slot] = Slot::Leaf(-params.shrinkage * g / (h + params.lambda));
    }
    assemble(&slots, 0)
}

fn assemble(slots: &[Slot], index: usize) -> TreeNode {
    match &slots[index] {
        Slot::Leaf(value) => TreeNode::Leaf { leaf: *value },
        Slot::Split { choice, threshold, left, right } => TreeNode::Split {
            feature: choice.feature,
            threshold: *threshold,
            gain: choice.gain,
            left: Box::new(assemble(slots, *left)),
            right: Box::new(assemble(slots, *right)),
        },
        Slot::Pending => unreachable!("every slot is resolved before assembly"),
    }
}
