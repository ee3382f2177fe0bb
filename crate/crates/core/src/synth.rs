//! Synthetic activation dumps with a planted correctness signal, and the
//! perturbations used to test robustness.
//!
//! Each instance draws a base vector `b`; layer `ℓ` holds `b` plus a small
//! per-layer drift. Incorrect instances additionally get `margin · v` added to
//! every layer from `late_from` on, so their late-layer distributions move
//! away from the early ones and the cross-layer divergences grow.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::manifest::{write_manifest, DatasetManifest};
use crate::dataset::sigact::{read_activation_file, write_activation_file};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::types::{ActivationStack, InstanceRecord, ModelGeometry, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSignal {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_instances: usize,
    pub token_count: usize,
    /// Fraction of instances labelled incorrect.
    pub error_rate: f64,
    /// Scale of the late-layer shift applied to incorrect instances.
    pub margin: f64,
    pub base_scale: f64,
    pub layer_noise: f64,
    pub token_noise: f64,
    /// First perturbed layer; `None` means `L / 2`.
    pub late_from: Option<usize>,
    pub seed: u64,
}

impl Default for PlantedSignal {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 32,
            n_instances: 1000,
            token_count: 2,
            error_rate: 0.3,
            margin: 0.4,
            base_scale: 1.0,
            layer_noise: 0.25,
            token_noise: 0.05,
            late_from: None,
            seed: 0,
        }
    }
}

impl PlantedSignal {
    fn validate(&self) -> Result<ModelGeometry> {
        let geometry = ModelGeometry::new(self.n_layers, self.d_model)?;
        if self.n_instances < 2 || self.token_count == 0 {
            return Err(Error::InvalidConfig("need at least 2 instances and 1 token".into()));
        }
        if !(self.error_rate > 0.0 && self.error_rate < 1.0) {
            return Err(Error::InvalidConfig(format!("error_rate must lie in (0, 1), got {}", self.error_rate)));
        }
        let scales = [self.margin, self.base_scale, self.layer_noise, self.token_noise];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("noise scales must be finite and nonnegative".into()));
        }
        if self.late_from.is_some_and(|l| l >= self.n_layers) {
            return Err(Error::InvalidConfig("late_from must be below n_layers".into()));
        }
        Ok(geometry)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn planted_stack(spec: &PlantedSignal, geometry: ModelGeometry, correct: bool, rng: &mut ChaCha8Rng) -> Result<ActivationStack> {
    let (l_count, d) = (spec.n_layers, spec.d_model);
    let late_from = spec.late_from.unwrap_or(l_count / 2);
    let base = normal_vec(rng, d, spec.base_scale);
    let shift = normal_vec(rng, d, spec.margin);
    let layers: Vec<Vec<f64>> = (0..l_count)
        .map(|l| {
            let drift = normal_vec(rng, d, spec.layer_noise);
            (0..d)
                .map(|k| {
                    let planted = if !correct && l >= late_from { shift[k] } else { 0.0 };
                    base[k] + drift[k] + planted
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(spec.token_count * l_count * d);
    for _ in 0..spec.token_count {
        for layer in &layers {
            let jitter = normal_vec(rng, d, spec.token_noise);
            values.extend(layer.iter().zip(jitter).map(|(v, j)| (v + j) as f32));
        }
    }
    ActivationStack::new(geometry, spec.token_count, values)
}

fn activation_rel_path(id: &str) -> PathBuf {
    PathBuf::from("activations").join(format!("{id}.sigact"))
}

/// Writes `out_dir/manifest.json` plus one SIGACT1 file per instance; all
/// records are left unsplit.
pub fn generate_planted(spec: &PlantedSignal, dataset_name: &str, out_dir: &Path) -> Result<DatasetManifest> {
    let geometry = spec.validate()?;
    let act_dir = out_dir.join("activations");
    fs::create_dir_all(&act_dir).map_err(|e| Error::io(&act_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth"));
    let n_errors = ((spec.n_instances as f64 * spec.error_rate).round() as usize).clamp(1, spec.n_instances - 1);
    let mut labels: Vec<u8> = (0..spec.n_instances).map(|i| u8::from(i >= n_errors)).collect();
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(spec.n_instances);
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("{dataset_name}-{i:05}");
        let stack = planted_stack(spec, geometry, label == 1, &mut rng)?;
        let rel = activation_rel_path(&id);
        write_activation_file(&stack, &out_dir.join(&rel))?;
        records.push(InstanceRecord {
            id,
            label,
            split: Split::Unsplit,
            activation_path: rel,
            token_count: spec.token_count,
        });
    }
    let manifest = DatasetManifest {
        dataset_name: dataset_name.to_string(),
        model_name: "synthetic".into(),
        geometry,
        precision_tag: "fp32".into(),
        records,
        base_dir: out_dir.to_path_buf(),
    };
    write_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Adds uniform noise in `±relative · std(row)` to every `(token, layer)`
/// row, with `std` the population standard deviation of that row. Writes the
/// perturbed copy under `out_dir` with the given precision tag.
pub fn perturb_dataset(
    manifest: &DatasetManifest,
    relative: f64,
    seed: u64,
    precision_tag: &str,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if !(relative.is_finite() && relative >= 0.0) {
        return Err(Error::InvalidConfig(format!("relative noise must be nonnegative, got {relative}")));
    }
    let act_dir = out_dir.join("activations");
    fs::create_dir_all(&act_dir).map_err(|e| Error::io(&act_dir, e))?;
    let records = manifest
        .records
        .par_iter()
        .map(|record| {
            let stack = read_activation_file(&manifest.resolve(record))?;
            let g = stack.geometry();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("perturb:{}", record.id)));
            let mut values = Vec::with_capacity(stack.values().len());
            for t in 0..stack.token_count() {
                for l in 0..g.n_layers() {
                    let row = stack.row(t, l);
                    let n = row.len() as f64;
                    let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
                    let var = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
                    let half_width = relative * var.sqrt();
                    for &v in row {
                        let noise = if half_width > 0.0 { rng.random_range(-half_width..=half_width) } else { 0.0 };
                        values.push((f64::from(v) + noise) as f32);
                    }
                }
            }
            let perturbed = ActivationStack::new(g, stack.token_count(), values)?;
            let rel = activation_rel_path(&record.id);
            write_activation_file(&perturbed, &out_dir.join(&rel))?;
            Ok(InstanceRecord { activation_path: rel, ..record.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = DatasetManifest {
        precision_tag: precision_tag.to_string(),
        records,
        base_dir: out_dir.to_path_buf(),
        ..manifest.clone()
    };
    write_manifest(&out, &out_dir.join("manifest.json"))?;
    Ok(out)
}

/// Same records and files with labels permuted by a seeded shuffle.
pub fn shuffle_labels(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let mut labels: Vec<u8> = manifest.records.iter().map(|r| r.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle_labels")));
    let mut out = manifest.clone();
    for (r, label) in out.records.iter_mut().zip(labels) {
        r.label = label;
    }
    out
}
