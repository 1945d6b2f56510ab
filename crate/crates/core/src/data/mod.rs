//! Dataset ingestion, preprocessing, splitting, oversampling and augmentation.

mod augment;
mod csv_io;
mod dataset;
pub mod iowa;
mod manifest;
mod pipeline;
mod preprocess;
pub mod smote;
mod split;
pub mod synth;

pub use augment::{augment_timeseries, jitter, AugmentConfig};
pub use csv_io::{load_csv, load_ragged_csv, read_csv, save_csv, write_csv_to, RawSequence};
pub use dataset::{Dataset, Provenance};
pub use iowa::{build_iowa_asos, IowaConfig, IowaReport};
pub use manifest::{load_dataset, save_dataset_dir, Manifest, DATA_FILE, MANIFEST_FILE};
pub use pipeline::{prepare, PipelineConfig, Prepared, Validation};
pub use preprocess::{impute_mean, impute_mean_with_reference, truncate_to_min, zscore, ImputeReport};
pub use smote::{bsmote_oversample, SmoteConfig, SmoteReport};
pub use split::{stratified_counts, stratified_split, Split, SplitSpec};
pub use synth::synth_benchmark;
