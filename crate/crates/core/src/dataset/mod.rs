//! Labelled flow datasets: complete-flow (CF) construction, parent-matched
//! partial-flow (PF) datasets, alignment, auditing and CSV interchange.

mod audit;
mod build;
mod csv_io;
mod distribution;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::meter::{feature_names, FeatureVector, FlowId, Trigger};

pub use audit::{audit, AuditReport, LabelAudit, Tally};
pub use build::{align, build_cf, build_pf, DEFAULT_MIN_CLASS_COUNT};
pub use csv_io::{csv_header, read_csv, read_csv_from, write_csv, write_csv_to};
pub use distribution::{distribution, distribution_with, DistributionSummary, LabelDistribution};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("expected a complete-flow dataset, got {0}")]
    NotComplete(Provenance),
}

/// Where a dataset's feature vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Complete,
    Partial(Trigger),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Complete => f.write_str("CF"),
            Provenance::Partial(t) => t.fmt(f),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "CF" {
            Ok(Provenance::Complete)
        } else {
            s.parse().map(Provenance::Partial)
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFlow {
    pub id: FlowId,
    pub features: FeatureVector,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub provenance: Provenance,
    pub flows: Vec<LabeledFlow>,
    pub feature_schema: Vec<String>,
}

impl Dataset {
    pub fn new(provenance: Provenance, flows: Vec<LabeledFlow>) -> Self {
        Self {
            provenance,
            flows,
            feature_schema: feature_names(),
        }
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self::new(provenance, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn keys(&self) -> HashSet<u64> {
        self.flows.iter().map(|f| f.id.hash64).collect()
    }

    /// Flow count per label, sorted by label.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for f in &self.flows {
            *m.entry(f.label.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Same dataset keeping only flows whose hash passes `keep`.
    pub fn filter_keys(&self, keep: impl Fn(u64) -> bool) -> Dataset {
        Dataset {
            provenance: self.provenance,
            flows: self
                .flows
                .iter()
                .filter(|f| keep(f.id.hash64))
                .cloned()
                .collect(),
            feature_schema: self.feature_schema.clone(),
        }
    }

    /// Row-major feature matrix in schema order.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.flows.iter().map(|f| f.features.to_values()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.flows.iter().map(|f| f.label.clone()).collect()
    }

    /// Checks the dataset invariants: unique hashes, non-empty labels, and
    /// the standard schema.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.feature_schema != feature_names() {
            return Err(DatasetError::SchemaMismatch(
                "non-standard feature schema".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(self.flows.len());
        for f in &self.flows {
            if f.label.is_empty() {
                return Err(DatasetError::SchemaMismatch(format!(
                    "flow {:#x} has an empty label",
                    f.id.hash64
                )));
            }
            if !seen.insert(f.id.hash64) {
                return Err(DatasetError::SchemaMismatch(format!(
                    "duplicate flow hash {:#x}",
                    f.id.hash64
                )));
            }
        }
        Ok(())
    }
}
