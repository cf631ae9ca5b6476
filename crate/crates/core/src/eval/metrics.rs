use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, Task};
use crate::labeling::DEFAULT_LABEL;

pub const BENIGN: &str = DEFAULT_LABEL;
pub const ANOMALY: &str = "ANOMALY";

/// Binary label of `label`. With an explicit anomaly set only its members
/// (and `ANOMALY` itself) map to `ANOMALY`; otherwise everything except
/// `BENIGN` does.
pub fn binary_label<'a>(label: &str, anomaly_labels: &BTreeSet<String>) -> &'a str {
    let anomalous = if label == ANOMALY {
        true
    } else if anomaly_labels.is_empty() {
        label != BENIGN
    } else {
        anomaly_labels.contains(label)
    };
    if anomalous {
        ANOMALY
    } else {
        BENIGN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences in `y_true`.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: Task,
    /// Label order of the confusion matrix.
    pub labels: Vec<String>,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[t][p]` counts true label `labels[t]` predicted as `labels[p]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions.
///
/// Binary: labels are mapped with [`binary_label`] and the reported values
/// are those of the `ANOMALY` class. Multiclass: reported values are the
/// unweighted means over classes present in `y_true`. Zero denominators
/// score 0.
pub fn compute_metrics(
    y_true: &[String],
    y_pred: &[String],
    task: Task,
    anomaly_labels: &BTreeSet<String>,
) -> Result<Metrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            y_true: y_true.len(),
            y_pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let map = |l: &String| -> String {
        match task {
            Task::Binary => binary_label(l, anomaly_labels).to_string(),
            Task::Multiclass => l.clone(),
        }
    };
    let t: Vec<String> = y_true.iter().map(map).collect();
    let p: Vec<String> = y_pred.iter().map(map).collect();

    let mut set: BTreeSet<String> = t.iter().chain(&p).cloned().collect();
    if task == Task::Binary {
        set.insert(ANOMALY.to_string());
    }
    let labels: Vec<String> = set.into_iter().collect();
    let pos = |l: &str| labels.binary_search_by(|x| x.as_str().cmp(l)).unwrap();
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (a, b) in t.iter().zip(&p) {
        confusion[pos(a)][pos(b)] += 1;
    }

    let mut per_class = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.insert(
            l.clone(),
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
            },
        );
    }

    let (precision, recall, f1) = match task {
        Task::Binary => {
            let m = per_class[ANOMALY];
            (m.precision, m.recall, m.f1)
        }
        Task::Multiclass => {
            let present: Vec<&ClassMetrics> =
                per_class.values().filter(|m| m.support > 0).collect();
            let n = present.len() as f64;
            (
                present.iter().map(|m| m.precision).sum::<f64>() / n,
                present.iter().map(|m| m.recall).sum::<f64>() / n,
                present.iter().map(|m| m.f1).sum::<f64>() / n,
            )
        }
    };

    Ok(Metrics {
        task,
        labels,
        per_class,
        precision,
        recall,
        f1,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn set(s: &[&str]) -> BTreeSet<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hand_case() {
        let m = compute_metrics(
            &v(&["A", "A", "B", "B"]),
            &v(&["A", "B", "B", "B"]),
            Task::Binary,
            &set(&["B"]),
        )
        .unwrap();
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 0.8);
        assert_eq!(m.labels, v(&["ANOMALY", "BENIGN"]));
        assert_eq!(m.confusion, vec![vec![2, 0], vec![1, 1]]);
    }

    #[test]
    fn perfect_prediction() {
        let y = v(&["BENIGN", "DoS", "PortScan", "DoS"]);
        for task in [Task::Binary, Task::Multiclass] {
            let m = compute_metrics(&y, &y, task, &BTreeSet::new()).unwrap();
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn never_predicted_class_scores_zero_precision() {
        let m = compute_metrics(
            &v(&["A", "B"]),
            &v(&["A", "A"]),
            Task::Multiclass,
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(m.per_class["B"].precision, 0.0);
        assert_eq!(m.per_class["B"].f1, 0.0);
        assert_eq!(m.precision, (0.5 + 0.0) / 2.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_metrics(&v(&["A"]), &v(&[]), Task::Binary, &BTreeSet::new()),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            compute_metrics(&[], &[], Task::Binary, &BTreeSet::new()),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn binary_mapping() {
        let none = BTreeSet::new();
        assert_eq!(binary_label("BENIGN", &none), BENIGN);
        assert_eq!(binary_label("DoS Hulk", &none), ANOMALY);
        assert_eq!(binary_label("ANOMALY", &set(&["B"])), ANOMALY);
        assert_eq!(binary_label("C", &set(&["B"])), BENIGN);
    }
}
