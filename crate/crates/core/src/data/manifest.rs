use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::csv_io::{load_csv, save_csv};
use super::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};

pub const DATA_FILE: &str = "dataset.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Sidecar description of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub seq_len: usize,
    pub samples: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub missing: usize,
    /// SHA-256 of the canonical CSV.
    pub content_hash: String,
    pub data_file: String,
}

impl Manifest {
    pub fn describe(ds: &Dataset) -> Self {
        Self {
            provenance: ds.provenance.clone(),
            seq_len: ds.seq_len(),
            samples: ds.len(),
            num_classes: ds.num_classes(),
            class_names: ds.class_names().to_vec(),
            class_counts: ds.class_counts(),
            missing: ds.missing_count(),
            content_hash: ds.content_hash(),
            data_file: DATA_FILE.into(),
        }
    }
}

/// Writes `dataset.csv` and `manifest.json` into `dir` (created if needed).
pub fn save_dataset_dir(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_csv(ds, &dir.join(DATA_FILE))?;
    let m = Manifest::describe(ds);
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

/// Resolves a dataset argument: a directory holding a manifest, a manifest
/// file, or a bare CSV.
pub fn load_dataset(path: &Path) -> Result<(Dataset, Option<Manifest>)> {
    let manifest_path: Option<PathBuf> = if path.is_dir() {
        Some(path.join(MANIFEST_FILE))
    } else if path.extension().is_some_and(|e| e == "json") {
        Some(path.to_path_buf())
    } else {
        None
    };
    let Some(mp) = manifest_path else {
        return Ok((load_csv(path)?, None));
    };
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let base = mp.parent().unwrap_or(Path::new("."));
    let mut ds = load_csv(&base.join(&m.data_file))?;
    let hash = ds.content_hash();
    if hash != m.content_hash {
        return Err(Error::Dataset(format!(
            "{}: content hash {hash} does not match manifest {}",
            m.data_file, m.content_hash
        )));
    }
    if ds.class_names() != m.class_names.as_slice() {
        return Err(Error::Dataset("class table differs from manifest".into()));
    }
    ds.provenance = m.provenance.clone();
    Ok((ds, Some(m)))
}
