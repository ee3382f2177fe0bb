use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::types::Split;

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Seeded train/test assignment.
///
/// Records are shuffled with a ChaCha8 stream from `seed`; the first
/// `round(n · test_fraction)` (at least one, at most `n - 1`) go to test.
/// Both splits must contain both labels.
pub fn split_dataset(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let n = manifest.records.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::TooFewRecords { required: MIN_SPLIT_RECORDS, found: n });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split = Split::Train;
    }
    for &i in &order[..n_test] {
        out.records[i].split = Split::Test;
    }

    for split in [Split::Train, Split::Test] {
        let mut seen = [false; 2];
        for r in out.records_in(split) {
            seen[r.label as usize] = true;
        }
        if !(seen[0] && seen[1]) {
            return Err(Error::DegenerateSplit(format!("{split:?} split lacks a class")));
        }
    }
    Ok(out)
}
