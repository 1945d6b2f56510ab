use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification summary. Rows of `confusion` are true classes, columns
/// predictions. Ratios with a zero denominator are 0. Macro F1 averages over
/// the classes that occur in the truth or the predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Mean cross-entropy, when computed from a model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], pred: &[usize], class_names: &[String]) -> Result<Self> {
        let l = class_names.len();
        if truth.len() != pred.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        if let Some(&bad) = truth.iter().chain(pred).find(|&&c| c >= l) {
            return Err(Error::invalid(format!("class {bad} outside {l} classes")));
        }
        let mut confusion = vec![vec![0usize; l]; l];
        for (&t, &p) in truth.iter().zip(pred) {
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion, class_names))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>, class_names: &[String]) -> Self {
        let l = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let diag: usize = (0..l).map(|c| confusion[c][c]).sum();
        let mut per_class = Vec::with_capacity(l);
        let (mut weighted, mut macro_sum, mut present) = (0.0, 0.0, 0usize);
        for c in 0..l {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = ratio(2 * tp, support + predicted);
            if support + predicted > 0 {
                macro_sum += f1;
                present += 1;
            }
            weighted += support as f64 * f1;
            per_class.push(ClassMetrics {
                name: class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                precision,
                recall,
                f1,
                support,
            });
        }
        Self {
            confusion,
            accuracy: ratio(diag, total),
            weighted_f1: if total == 0 { 0.0 } else { weighted / total as f64 },
            macro_f1: if present == 0 { 0.0 } else { macro_sum / present as f64 },
            per_class,
            loss: None,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let w = self.per_class.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "{:<w$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            s += &format!(
                "{:<w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                c.name, c.precision, c.recall, c.f1, c.support
            );
        }
        s += &format!("\naccuracy     {:.4}\nweighted f1  {:.4}\nmacro f1     {:.4}\n", self.accuracy, self.weighted_f1, self.macro_f1);
        if let Some(l) = self.loss {
            s += &format!("loss         {l:.6}\n");
        }
        s += "\nconfusion (rows true, columns predicted)\n";
        for row in &self.confusion {
            s += &row.iter().map(|v| format!("{v:>5}")).collect::<String>();
            s.push('\n');
        }
        s
    }
}
