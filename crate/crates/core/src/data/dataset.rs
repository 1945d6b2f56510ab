use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Where a dataset came from and the parameters used to build it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(
            key.to_owned(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
        self
    }
}

/// `N` univariate sequences of a shared length `t` with integer labels.
///
/// Missing readings are stored as NaN; [`Dataset::missing_count`] is zero
/// once preprocessing has run.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    len: usize,
    values: Vec<f64>,
    ids: Vec<String>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        len: usize,
        values: Vec<f64>,
        ids: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = labels.len();
        if len == 0 {
            return Err(Error::Dataset("sequence length must be positive".into()));
        }
        if values.len() != n * len || ids.len() != n {
            return Err(Error::Dataset(format!(
                "{} values and {} ids for {n} sequences of length {len}",
                values.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Dataset(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Dataset("infinite reading".into()));
        }
        Ok(Self {
            len,
            values,
            ids,
            labels,
            class_names,
            provenance,
        })
    }

    /// Builds a dataset from `(id, label name, readings)` rows, interning
    /// labels in first-seen order.
    pub fn from_rows<I, S>(rows: I, provenance: Provenance) -> Result<Self>
    where
        I: IntoIterator<Item = (String, S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut class_names: Vec<String> = Vec::new();
        let mut lookup: BTreeMap<String, usize> = BTreeMap::new();
        let (mut ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
        let mut len = None;
        for (id, label, v) in rows {
            let t = *len.get_or_insert(v.len());
            if v.len() != t {
                return Err(Error::Dataset(format!(
                    "sequence `{id}` has length {} but expected {t}",
                    v.len()
                )));
            }
            let label = label.as_ref();
            let c = *lookup.entry(label.to_owned()).or_insert_with(|| {
                class_names.push(label.to_owned());
                class_names.len() - 1
            });
            ids.push(id);
            labels.push(c);
            values.extend(v);
        }
        let len = len.ok_or_else(|| Error::Dataset("no sequences".into()))?;
        Self::new(len, values, ids, labels, class_names, provenance)
    }

    /// Sequence length `t`.
    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sequence(&self, i: usize) -> &[f64] {
        &self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn sequence_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn is_missing(&self, i: usize, step: usize) -> bool {
        self.values[i * self.len + step].is_nan()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_names.len()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_names.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Errors unless every class has at least one sample.
    pub fn check_classes_populated(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(c) => Err(Error::Dataset(format!(
                "class `{}` has no samples",
                self.class_names[c]
            ))),
            None => Ok(()),
        }
    }

    /// Errors if any reading is missing.
    pub fn check_complete(&self) -> Result<()> {
        match self.missing_count() {
            0 => Ok(()),
            n => Err(Error::Dataset(format!("{n} missing readings remain"))),
        }
    }

    /// The subset at `indices` (in that order), sharing the class table.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.len);
        for &i in indices {
            values.extend_from_slice(self.sequence(i));
        }
        Dataset {
            len: self.len,
            values,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Appends one sequence with an existing label.
    pub fn push(&mut self, id: String, label: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.len || label >= self.class_names.len() {
            return Err(Error::Dataset(format!(
                "cannot append `{id}`: length {} label {label}",
                values.len()
            )));
        }
        self.ids.push(id);
        self.labels.push(label);
        self.values.extend_from_slice(values);
        Ok(())
    }

    /// SHA-256 over the canonical CSV serialization, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        super::csv_io::write_csv_to(self, &mut bytes).expect("in-memory write");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<(String, &'static str, Vec<f64>)> {
        vec![
            ("a".into(), "temp", vec![1.0, 2.0]),
            ("b".into(), "wind", vec![3.0, f64::NAN]),
            ("c".into(), "temp", vec![5.0, 6.0]),
        ]
    }

    #[test]
    fn labels_interned_in_first_seen_order() {
        let d = Dataset::from_rows(rows(), Provenance::new("test")).unwrap();
        assert_eq!(d.class_names(), ["temp", "wind"]);
        assert_eq!(d.labels(), [0, 1, 0]);
        assert_eq!(d.class_counts(), [2, 1]);
        assert!(d.is_missing(1, 1));
        assert_eq!(d.missing_count(), 1);
        assert!(d.check_complete().is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut r = rows();
        r[2].2.pop();
        assert!(Dataset::from_rows(r, Provenance::default()).is_err());
    }

    #[test]
    fn select_and_hash() {
        let d = Dataset::from_rows(rows(), Provenance::new("test")).unwrap();
        let s = d.select(&[2, 0]);
        assert_eq!(s.sequence(0), [5.0, 6.0]);
        assert_eq!(s.ids(), ["c", "a"]);
        assert_eq!(s.content_hash(), d.select(&[2, 0]).content_hash());
        assert_ne!(s.content_hash(), d.select(&[0, 2]).content_hash());
        assert_eq!(s.content_hash().len(), 64);
    }
}
