use serde::{Deserialize, Serialize};

use super::csv_io::RawSequence;
use super::dataset::Dataset;

/// How each missing reading was filled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputeReport {
    /// Filled with the class mean at the same timestamp.
    pub timestamp_mean: usize,
    /// Filled with the class mean over all timestamps.
    pub class_mean: usize,
    /// Filled with zero (the class had no readings at all).
    pub zero: usize,
}

impl ImputeReport {
    pub fn total(&self) -> usize {
        self.timestamp_mean + self.class_mean + self.zero
    }
}

/// Fills each missing reading `(i, τ)` with the mean of the non-missing
/// readings at `τ` over all samples of the same class. A fully missing
/// `(class, τ)` slot falls back to the class mean, then to zero.
pub fn impute_mean(ds: &Dataset) -> (Dataset, ImputeReport) {
    let all: Vec<usize> = (0..ds.len()).collect();
    impute_mean_with_reference(ds, &all)
}

/// [`impute_mean`] with statistics drawn only from the samples in
/// `reference` (e.g. the training split), applied to every sample.
pub fn impute_mean_with_reference(ds: &Dataset, reference: &[usize]) -> (Dataset, ImputeReport) {
    let t = ds.seq_len();
    let l = ds.num_classes();
    let mut sum = vec![0.0; l * t];
    let mut cnt = vec![0usize; l * t];
    for &i in reference {
        let c = ds.labels()[i];
        for (tau, &v) in ds.sequence(i).iter().enumerate() {
            if !v.is_nan() {
                sum[c * t + tau] += v;
                cnt[c * t + tau] += 1;
            }
        }
    }
    let class_mean: Vec<Option<f64>> = (0..l)
        .map(|c| {
            let n: usize = cnt[c * t..(c + 1) * t].iter().sum();
            (n > 0).then(|| sum[c * t..(c + 1) * t].iter().sum::<f64>() / n as f64)
        })
        .collect();

    let mut out = ds.clone();
    let mut report = ImputeReport::default();
    for i in 0..ds.len() {
        let c = ds.labels()[i];
        for (tau, v) in out.sequence_mut(i).iter_mut().enumerate() {
            if !v.is_nan() {
                continue;
            }
            let k = c * t + tau;
            *v = if cnt[k] > 0 {
                report.timestamp_mean += 1;
                sum[k] / cnt[k] as f64
            } else if let Some(m) = class_mean[c] {
                report.class_mean += 1;
                m
            } else {
                report.zero += 1;
                0.0
            };
        }
    }
    (out, report)
}

/// Cuts every sequence to the shortest length, keeping the earliest readings.
pub fn truncate_to_min(mut rows: Vec<RawSequence>) -> Vec<RawSequence> {
    let min = rows.iter().map(|r| r.values.len()).min().unwrap_or(0);
    for r in &mut rows {
        r.values.truncate(min);
    }
    rows
}

/// Per-sequence standardization; constant sequences are only centred.
/// Missing readings stay missing.
pub fn zscore(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for i in 0..ds.len() {
        let s = out.sequence_mut(i);
        let present: Vec<f64> = s.iter().copied().filter(|v| !v.is_nan()).collect();
        if present.is_empty() {
            continue;
        }
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for v in s.iter_mut() {
            *v -= mean;
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use proptest::prelude::*;

    const M: f64 = f64::NAN;

    fn ds(rows: Vec<(&str, Vec<f64>)>) -> Dataset {
        Dataset::from_rows(
            rows.into_iter()
                .enumerate()
                .map(|(i, (l, v))| (format!("s{i}"), l, v)),
            Provenance::new("test"),
        )
        .unwrap()
    }

    #[test]
    fn timestamp_mean_within_class() {
        let d = ds(vec![("a", vec![10.0, 1.0]), ("a", vec![M, 2.0]), ("a", vec![14.0, 3.0]), ("b", vec![100.0, 0.0])]);
        let (out, r) = impute_mean(&d);
        assert_eq!(out.sequence(1), [12.0, 2.0]);
        assert_eq!(r, ImputeReport { timestamp_mean: 1, class_mean: 0, zero: 0 });
    }

    #[test]
    fn complete_data_unchanged() {
        let d = ds(vec![("a", vec![1.0, 2.0]), ("b", vec![3.0, 4.0])]);
        let (out, r) = impute_mean(&d);
        assert_eq!(out, d);
        assert_eq!(r.total(), 0);
    }

    #[test]
    fn fallback_chain() {
        // class a: column 0 fully missing, overall mean (4 + 6) / 2 = 5
        let d = ds(vec![("a", vec![M, 4.0]), ("a", vec![M, 6.0]), ("b", vec![M, M])]);
        let (out, r) = impute_mean(&d);
        assert_eq!(out.sequence(0), [5.0, 4.0]);
        assert_eq!(out.sequence(1), [5.0, 6.0]);
        assert_eq!(out.sequence(2), [0.0, 0.0]);
        assert_eq!(r, ImputeReport { timestamp_mean: 0, class_mean: 2, zero: 2 });
    }

    #[test]
    fn reference_restricts_statistics() {
        let d = ds(vec![("a", vec![10.0]), ("a", vec![20.0]), ("a", vec![M])]);
        let (out, _) = impute_mean_with_reference(&d, &[0, 2]);
        assert_eq!(out.sequence(2), [10.0]);
    }

    #[test]
    fn truncation_keeps_the_head() {
        let mk = |n: usize| RawSequence { id: n.to_string(), label: "x".into(), values: (0..n).map(|v| v as f64).collect() };
        let rows = truncate_to_min(vec![mk(445), mk(500), mk(460)]);
        assert!(rows.iter().all(|r| r.values.len() == 445));
        assert_eq!(rows[1].values[..3], [0.0, 1.0, 2.0]);
        let same = truncate_to_min(vec![mk(3), mk(3)]);
        assert_eq!(same, vec![mk(3), mk(3)]);
    }

    #[test]
    fn zscore_rows() {
        let d = ds(vec![("a", vec![1.0, 3.0]), ("a", vec![5.0, 5.0])]);
        let z = zscore(&d);
        assert_eq!(z.sequence(0), [-1.0, 1.0]);
        assert_eq!(z.sequence(1), [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn present_readings_never_change(
            vals in proptest::collection::vec(-100.0f64..100.0, 24),
            mask in proptest::collection::vec(any::<bool>(), 24),
            labels in proptest::collection::vec(0usize..3, 6),
        ) {
            let names = ["p", "q", "r"];
            let d = Dataset::from_rows(
                (0..6).map(|i| {
                    let v = (0..4).map(|j| if mask[i * 4 + j] { f64::NAN } else { vals[i * 4 + j] }).collect();
                    (format!("s{i}"), names[labels[i]], v)
                }),
                Provenance::default(),
            ).unwrap();
            let (out, r) = impute_mean(&d);
            prop_assert_eq!(out.missing_count(), 0);
            prop_assert_eq!(r.total(), d.missing_count());
            for (a, b) in d.values().iter().zip(out.values()) {
                if !a.is_nan() {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
