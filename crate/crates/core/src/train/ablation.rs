use std::io::Write;

use serde::Serialize;

use super::metrics::EvalReport;
use super::trainer::{evaluate, train, EpochRecord, TrainConfig};
use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::model::{DeepHeteroIoT, ModelConfig, Variant};

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
    pub best_epoch: usize,
    pub test_hash: String,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

/// Trains each variant from the same seed on the same prepared split and
/// evaluates it on the test split.
pub fn run_ablation(
    dataset: &str,
    data: &Prepared,
    base: &ModelConfig,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        log::info!("ablation: training {v}");
        let mut model = DeepHeteroIoT::new(base.clone().with_variant(v))?;
        let out = train(&mut model, &data.train, &data.val, cfg)?;
        let report = evaluate(&model, &data.test)?;
        log::info!("ablation: {v} test accuracy {:.4}", report.accuracy);
        rows.push(AblationRow {
            variant: v,
            report,
            best_epoch: out.checkpoint.epoch,
            test_hash: data.test.content_hash(),
            history: out.history,
        });
    }
    Ok(AblationTable {
        dataset: dataset.to_owned(),
        rows,
    })
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Rows of model label, accuracy, weighted F1 and macro F1 in percent.
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let cols = [
            "Model".to_string(),
            format!("{d} (Accuracy)"),
            format!("{d} (F1-Score)"),
            format!("{d} (Macro F1)"),
        ];
        let mut lines = vec![cols.to_vec()];
        for r in &self.rows {
            lines.push(vec![
                r.variant.label().to_string(),
                format!("{:.2}%", 100.0 * r.report.accuracy),
                format!("{:.2}%", 100.0 * r.report.weighted_f1),
                format!("{:.2}%", 100.0 * r.report.macro_f1),
            ]);
        }
        let widths: Vec<usize> = (0..4).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            s += &format!("| {} |\n", cells.join(" | "));
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                s += &format!("|-{}-|\n", rule.join("-|-"));
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["variant", "model", "accuracy", "weighted_f1", "macro_f1", "best_epoch", "test_hash"])?;
        for r in &self.rows {
            w.write_record([
                r.variant.as_str().to_string(),
                r.variant.label().to_string(),
                format!("{:?}", r.report.accuracy),
                format!("{:?}", r.report.weighted_f1),
                format!("{:?}", r.report.macro_f1),
                r.best_epoch.to_string(),
                r.test_hash.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::Dataset(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare, synth_benchmark, PipelineConfig, Validation};

    #[test]
    fn four_rows_on_a_shared_split() {
        let d = synth_benchmark(3, 8, 16, 1).unwrap();
        let p = prepare(&d, &PipelineConfig { validation: Validation::Test, ..Default::default() }).unwrap();
        let base = ModelConfig::new(Variant::Full, 16, 3).scaled(16);
        let cfg = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
        let t = run_ablation("Synthetic", &p, &base, &cfg, &Variant::ALL).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.test_hash == p.test_hash));
        let text = t.to_text();
        assert!(text.contains("Synthetic (Accuracy)") && text.contains("Synthetic (F1-Score)"));
        assert_eq!(text.lines().count(), 6);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }
}
