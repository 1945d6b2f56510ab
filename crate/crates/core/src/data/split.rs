use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 100,
        }
    }
}

/// Disjoint index sets covering the dataset, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class train counts: `floor(f·n_c)` first, then one extra sample to
/// the classes with the largest fractional remainder (ties to the lower
/// class index) until the total reaches `round(f·N)`.
pub fn stratified_counts(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let target = (fraction * n as f64).round() as usize;
    let mut train: Vec<usize> = counts
        .iter()
        .map(|&c| ((fraction * c as f64 + 1e-9).floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let frac = |c: usize| {
        let x = fraction * counts[c] as f64;
        x - x.floor()
    };
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut total: usize = train.iter().sum();
    for &c in &order {
        if total >= target {
            break;
        }
        if train[c] < counts[c] {
            train[c] += 1;
            total += 1;
        }
    }
    train
}

pub fn stratified_split(ds: &Dataset, split_spec: &SplitSpec) -> Result<Split> {
    if !(split_spec.train_fraction > 0.0 && split_spec.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {}",
            split_spec.train_fraction
        )));
    }
    let by_class = ds.class_indices();
    if let Some(c) = by_class.iter().position(|v| v.len() == 1) {
        return Err(Error::Dataset(format!(
            "class `{}` has a single sample and cannot be split",
            ds.class_names()[c]
        )));
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let k = stratified_counts(&counts, split_spec.train_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(split_spec.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (idx, &k) in by_class.into_iter().zip(&k) {
        let mut idx = idx;
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..k.min(idx.len())]);
        test.extend_from_slice(&idx[k.min(idx.len())..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
