use serde::{Deserialize, Serialize};

use super::augment::{augment_timeseries, AugmentConfig};
use super::dataset::Dataset;
use super::preprocess::{impute_mean, impute_mean_with_reference, zscore, ImputeReport};
use super::smote::{bsmote_oversample, SmoteConfig, SmoteReport};
use super::split::{stratified_split, SplitSpec};
use crate::error::{Error, Result};

/// Source of the validation set used for checkpoint selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validation {
    /// Stratified fraction carved from the training split.
    Fraction(f64),
    /// The test split doubles as validation.
    Test,
}

impl Default for Validation {
    fn default() -> Self {
        Validation::Fraction(0.15)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub split: SplitSpec,
    pub validation: Validation,
    /// Impute from training statistics only instead of the whole dataset.
    pub leak_free_impute: bool,
    /// Per-sequence standardization.
    pub zscore: bool,
    pub augment: Option<AugmentConfig>,
    pub smote: Option<SmoteConfig>,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Dataset indices of the test split.
    pub test_indices: Vec<usize>,
    pub test_hash: String,
    pub impute: ImputeReport,
    pub smote: Option<SmoteReport>,
}

/// Imputation, split, validation carve-out, optional standardization, then
/// augmentation and oversampling of the training part only.
pub fn prepare(ds: &Dataset, cfg: &PipelineConfig) -> Result<Prepared> {
    ds.check_classes_populated()?;
    let (imputed, split, impute) = if cfg.leak_free_impute {
        let split = stratified_split(ds, &cfg.split)?;
        let (d, r) = impute_mean_with_reference(ds, &split.train);
        (d, split, r)
    } else {
        let (d, r) = impute_mean(ds);
        let split = stratified_split(&d, &cfg.split)?;
        (d, split, r)
    };
    let data = if cfg.zscore { zscore(&imputed) } else { imputed };
    let test = data.select(&split.test);
    let trainval = data.select(&split.train);
    let (mut train, val) = match cfg.validation {
        Validation::Test => (trainval, test.clone()),
        Validation::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("validation fraction must lie in (0, 1), got {f}")));
            }
            let inner = SplitSpec {
                train_fraction: 1.0 - f,
                seed: cfg.split.seed.wrapping_add(1),
            };
            let s = stratified_split(&trainval, &inner)?;
            (trainval.select(&s.train), trainval.select(&s.test))
        }
    };
    if let Some(a) = &cfg.augment {
        train = augment_timeseries(&train, a)?;
    }
    let smote = match &cfg.smote {
        Some(s) => {
            let (d, r) = bsmote_oversample(&train, s)?;
            train = d;
            Some(r)
        }
        None => None,
    };
    Ok(Prepared {
        test_hash: test.content_hash(),
        train,
        val,
        test,
        test_indices: split.test,
        impute,
        smote,
    })
}
