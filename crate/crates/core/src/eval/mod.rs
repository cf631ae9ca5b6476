//! Train/test scenarios over CF and PF datasets, metrics and threshold sweeps.

mod metrics;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{align, Dataset, DatasetError, Provenance};
use crate::forest::{ForestError, RandomForest, TrainConfig};
use crate::meter::Trigger;

pub use metrics::{
    binary_label, compute_metrics, f1_score, ClassMetrics, Metrics, ANOMALY, BENIGN,
};
pub use split::{split_keys, Split, DEFAULT_SPLIT_RATIO};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("split ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("y_true has {y_true} labels but y_pred has {y_pred}")]
    LengthMismatch { y_true: usize, y_pred: usize },
    #[error("no labels to score")]
    EmptyInput,
    #[error("{0} side is empty after intersecting with the split")]
    EmptySide(&'static str),
    #[error("{0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Task::Binary),
            "multi" | "multiclass" => Ok(Task::Multiclass),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "CF_CF")]
    CfCf,
    #[serde(rename = "PF_PF")]
    PfPf,
    #[serde(rename = "CF_PF")]
    CfPf,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::CfCf, ScenarioKind::PfPf, ScenarioKind::CfPf];
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::CfCf => "CF_CF",
            ScenarioKind::PfPf => "PF_PF",
            ScenarioKind::CfPf => "CF_PF",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CF_CF" => Ok(ScenarioKind::CfCf),
            "PF_PF" => Ok(ScenarioKind::PfPf),
            "CF_PF" => Ok(ScenarioKind::CfPf),
            _ => Err(format!("unknown scenario {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub task: Task,
    pub threshold: Option<Trigger>,
}

impl Scenario {
    pub fn cf_cf(task: Task) -> Self {
        Self {
            kind: ScenarioKind::CfCf,
            task,
            threshold: None,
        }
    }

    pub fn partial(kind: ScenarioKind, task: Task, threshold: Trigger) -> Self {
        Self {
            kind,
            task,
            threshold: Some(threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub metrics: Metrics,
    pub n_train: usize,
    pub n_test: usize,
}

fn rows_and_labels(
    ds: &Dataset,
    keep: impl Fn(u64) -> bool,
    task: Task,
    anomaly: &BTreeSet<String>,
) -> (Vec<Vec<f64>>, Vec<String>) {
    ds.flows
        .iter()
        .filter(|f| keep(f.id.hash64))
        .map(|f| {
            let label = match task {
                Task::Binary => binary_label(&f.label, anomaly).to_string(),
                Task::Multiclass => f.label.clone(),
            };
            (f.features.to_values(), label)
        })
        .unzip()
}

/// Trains and tests one scenario.
///
/// `pf` must be given for PF_PF and CF_PF and be aligned with `cf`.
pub fn run_scenario(
    scenario: &Scenario,
    cf: &Dataset,
    pf: Option<&Dataset>,
    split: &Split,
    tc: &TrainConfig,
    anomaly_labels: &BTreeSet<String>,
) -> Result<ScenarioOutcome, EvalError> {
    if cf.provenance != Provenance::Complete {
        return Err(DatasetError::NotComplete(cf.provenance).into());
    }
    let (train_ds, test_ds) = match (scenario.kind, pf) {
        (ScenarioKind::CfCf, None) => (cf, cf),
        (ScenarioKind::PfPf, Some(pf)) => (pf, pf),
        (ScenarioKind::CfPf, Some(pf)) => (cf, pf),
        (ScenarioKind::CfCf, Some(_)) => {
            return Err(EvalError::InvalidScenario(
                "CF_CF takes no PF dataset".into(),
            ))
        }
        (_, None) => {
            return Err(EvalError::InvalidScenario(format!(
                "{} needs a PF dataset",
                scenario.kind
            )))
        }
    };
    let (x_train, y_train) = rows_and_labels(
        train_ds,
        |h| split.is_train(h),
        scenario.task,
        anomaly_labels,
    );
    let (x_test, y_test) =
        rows_and_labels(test_ds, |h| split.is_test(h), scenario.task, anomaly_labels);
    if x_train.is_empty() {
        return Err(EvalError::EmptySide("train"));
    }
    if x_test.is_empty() {
        return Err(EvalError::EmptySide("test"));
    }
    let forest = RandomForest::fit(
        &x_train,
        &y_train,
        train_ds.feature_schema.clone(),
        tc,
        true,
    )?;
    let y_pred = forest.predict_rows(&x_test)?;
    Ok(ScenarioOutcome {
        metrics: compute_metrics(&y_test, &y_pred, scenario.task, anomaly_labels)?,
        n_train: x_train.len(),
        n_test: x_test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub threshold: Trigger,
    pub scenario: ScenarioKind,
    pub task: Task,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub skipped_reason: Option<String>,
}

impl ReportRow {
    pub fn is_skipped(&self) -> bool {
        self.skipped_reason.is_some()
    }
}

/// Long-format sweep results ordered by (threshold, scenario, task).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str =
    "threshold,scenario,task,precision,recall,f1,n_train,n_test,skipped_reason";

impl Report {
    pub fn all_skipped(&self) -> bool {
        self.rows.iter().all(ReportRow::is_skipped)
    }

    pub fn get(
        &self,
        threshold: Trigger,
        scenario: ScenarioKind,
        task: Task,
    ) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.threshold == threshold && r.scenario == scenario && r.task == task)
    }

    /// Reported f1, if the cell ran.
    pub fn f1(&self, threshold: Trigger, scenario: ScenarioKind, task: Task) -> Option<f64> {
        self.get(threshold, scenario, task).and_then(|r| r.f1)
    }

    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let reason = r.skipped_reason.as_deref().unwrap_or("");
            let reason = if reason.contains([',', '"', '\n']) {
                format!("\"{}\"", reason.replace('"', "\"\""))
            } else {
                reason.to_string()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.threshold,
                r.scenario,
                r.task,
                num(r.precision),
                num(r.recall),
                num(r.f1),
                r.n_train,
                r.n_test,
                reason
            ));
        }
        out
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:<6} {:<10} {:>9} {:>9} {:>9} {:>8} {:>8}  note",
            "threshold", "scen.", "task", "precision", "recall", "f1", "n_train", "n_test"
        )?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:<6} {:<10} {:>9} {:>9} {:>9} {:>8} {:>8}  {}",
                r.threshold.to_string(),
                r.scenario.to_string(),
                r.task.to_string(),
                num(r.precision),
                num(r.recall),
                num(r.f1),
                r.n_train,
                r.n_test,
                r.skipped_reason
                    .as_deref()
                    .map(|s| format!("skipped: {s}"))
                    .unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Runs the three scenarios for every task and threshold.
///
/// Each PF dataset is aligned against `cf` first; CF_CF rows use the aligned
/// CF side of their threshold. Failing cells are recorded as skipped rows and
/// never abort the sweep.
pub fn sweep(
    cf: &Dataset,
    pf_family: &BTreeMap<Trigger, Dataset>,
    tasks: &[Task],
    tc: &TrainConfig,
    split: &Split,
    anomaly_labels: &BTreeSet<String>,
) -> Result<Report, EvalError> {
    sweep_scenarios(
        cf,
        pf_family,
        &ScenarioKind::ALL,
        tasks,
        tc,
        split,
        anomaly_labels,
    )
}

/// [`sweep`] restricted to the given scenario kinds.
pub fn sweep_scenarios(
    cf: &Dataset,
    pf_family: &BTreeMap<Trigger, Dataset>,
    scenarios: &[ScenarioKind],
    tasks: &[Task],
    tc: &TrainConfig,
    split: &Split,
    anomaly_labels: &BTreeSet<String>,
) -> Result<Report, EvalError> {
    let mut tasks: Vec<Task> = tasks.to_vec();
    tasks.sort();
    tasks.dedup();
    let mut scenarios: Vec<ScenarioKind> = scenarios.to_vec();
    scenarios.sort();
    scenarios.dedup();
    let aligned: Vec<(Trigger, Dataset, Dataset)> = pf_family
        .iter()
        .map(|(t, pf)| align(cf, pf).map(|(c, p)| (*t, c, p)))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, ScenarioKind, Task)> = (0..aligned.len())
        .flat_map(|i| {
            let tasks = &tasks;
            scenarios
                .iter()
                .flat_map(move |&s| tasks.iter().map(move |&t| (i, s, t)))
        })
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(i, kind, task)| {
            let (threshold, cf_t, pf_t) = &aligned[i];
            let (scenario, pf) = match kind {
                ScenarioKind::CfCf => (Scenario::cf_cf(task), None),
                _ => (Scenario::partial(kind, task, *threshold), Some(pf_t)),
            };
            let mut row = ReportRow {
                threshold: *threshold,
                scenario: kind,
                task,
                precision: None,
                recall: None,
                f1: None,
                n_train: 0,
                n_test: 0,
                skipped_reason: None,
            };
            match run_scenario(&scenario, cf_t, pf, split, tc, anomaly_labels) {
                Ok(o) => {
                    row.precision = Some(o.metrics.precision);
                    row.recall = Some(o.metrics.recall);
                    row.f1 = Some(o.metrics.f1);
                    row.n_train = o.n_train;
                    row.n_test = o.n_test;
                }
                Err(e) => row.skipped_reason = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(Report { rows })
}
