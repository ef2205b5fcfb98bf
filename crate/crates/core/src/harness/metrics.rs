use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelValue;
use crate::dsl::Verdict;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub task_id: String,
    pub batch_id: String,
    pub predicted: Verdict,
    pub label: LabelValue,
}

/// Predicted verdict against ground-truth label for each (task, batch).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecisionMatrix {
    pub decisions: Vec<Decision>,
}

impl DecisionMatrix {
    pub fn push(&mut self, task_id: &str, batch_id: &str, predicted: Verdict, label: LabelValue) {
        self.decisions.push(Decision {
            task_id: task_id.to_owned(),
            batch_id: batch_id.to_owned(),
            predicted,
            label,
        });
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for d in &self.decisions {
            w.serialize(d).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let decisions = r
            .deserialize()
            .collect::<std::result::Result<Vec<Decision>, _>>()
            .map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
        Ok(Self { decisions })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub passed_safe: usize,
    pub false_alarm: usize,
    pub rejected_erroneous: usize,
    pub missed: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.passed_safe + self.false_alarm + self.rejected_erroneous + self.missed
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    /// Scores for one class given true positives and the two error counts.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// Counts plus scores for detecting erroneous batches. `safe_class`
/// scores the same matrix with passing safe batches as the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub safe_class: Scores,
}

pub fn evaluate(matrix: &DecisionMatrix) -> Metrics {
    let mut c = Counts::default();
    for d in &matrix.decisions {
        match (d.predicted, d.label) {
            (Verdict::Pass, LabelValue::Safe) => c.passed_safe += 1,
            (Verdict::Reject, LabelValue::Safe) => c.false_alarm += 1,
            (Verdict::Reject, LabelValue::Erroneous) => c.rejected_erroneous += 1,
            (Verdict::Pass, LabelValue::Erroneous) => c.missed += 1,
        }
    }
    let err = Scores::from_counts(c.rejected_erroneous, c.false_alarm, c.missed);
    Metrics {
        counts: c,
        precision: err.precision,
        recall: err.recall,
        f1: err.f1,
        safe_class: Scores::from_counts(c.passed_safe, c.missed, c.false_alarm),
    }
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rejected_erroneous: usize, false_alarm: usize, missed: usize, passed_safe: usize) -> DecisionMatrix {
        let mut m = DecisionMatrix::default();
        let mut add = |n: usize, p: Verdict, l: LabelValue| {
            for i in 0..n {
                m.push("t", &format!("b{i}"), p, l);
            }
        };
        add(rejected_erroneous, Verdict::Reject, LabelValue::Erroneous);
        add(false_alarm, Verdict::Reject, LabelValue::Safe);
        add(missed, Verdict::Pass, LabelValue::Erroneous);
        add(passed_safe, Verdict::Pass, LabelValue::Safe);
        m
    }

    #[test]
    fn hand_computed_point_eight() {
        let m = evaluate(&matrix(8, 2, 2, 8));
        assert_eq!((m.precision, m.recall), (0.8, 0.8));
        assert!((m.f1 - 0.8).abs() < 1e-15);
        assert_eq!(m.counts.total(), 20);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = evaluate(&matrix(5, 0, 0, 5));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let all_pass = evaluate(&matrix(0, 0, 7, 0));
        assert_eq!((all_pass.precision, all_pass.recall, all_pass.f1), (0.0, 0.0, 0.0));
        let empty = evaluate(&DecisionMatrix::default());
        assert_eq!(empty.f1, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let m = matrix(1, 1, 1, 1);
        let text = m.to_csv();
        assert!(text.starts_with("task_id,batch_id,predicted,label\n"));
        assert!(text.contains("t,b0,reject,erroneous"));
        assert_eq!(DecisionMatrix::from_csv(&text).unwrap(), m);
    }
}
