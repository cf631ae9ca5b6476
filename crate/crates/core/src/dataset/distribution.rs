use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::labeling::DEFAULT_LABEL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub flows: usize,
    pub min_duration_ms: f64,
    pub mean_duration_ms: f64,
    pub max_duration_ms: f64,
    pub min_packets: u64,
    pub mean_packets: f64,
    pub max_packets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub provenance: String,
    pub per_label: BTreeMap<String, LabelDistribution>,
    pub benign_flows: usize,
    pub anomaly_flows: usize,
    pub total_flows: usize,
}

pub fn distribution(ds: &Dataset) -> DistributionSummary {
    distribution_with(ds, DEFAULT_LABEL)
}

/// Per-label flow counts and duration/packet statistics; `benign_label`
/// decides the benign/anomaly split of the totals.
pub fn distribution_with(ds: &Dataset, benign_label: &str) -> DistributionSummary {
    let mut groups: BTreeMap<&str, Vec<(f64, u64)>> = BTreeMap::new();
    for f in &ds.flows {
        groups
            .entry(f.label.as_str())
            .or_default()
            .push((f.features.duration_ms, f.features.bidirectional.packets));
    }
    let per_label: BTreeMap<String, LabelDistribution> = groups
        .into_iter()
        .map(|(label, v)| {
            let n = v.len() as f64;
            let d = LabelDistribution {
                flows: v.len(),
                min_duration_ms: v.iter().map(|x| x.0).fold(f64::INFINITY, f64::min),
                mean_duration_ms: v.iter().map(|x| x.0).sum::<f64>() / n,
                max_duration_ms: v.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max),
                min_packets: v.iter().map(|x| x.1).min().unwrap_or(0),
                mean_packets: v.iter().map(|x| x.1 as f64).sum::<f64>() / n,
                max_packets: v.iter().map(|x| x.1).max().unwrap_or(0),
            };
            (label.to_string(), d)
        })
        .collect();
    let benign_flows = per_label.get(benign_label).map_or(0, |d| d.flows);
    DistributionSummary {
        provenance: ds.provenance.to_string(),
        benign_flows,
        anomaly_flows: ds.len() - benign_flows,
        total_flows: ds.len(),
        per_label,
    }
}

impl fmt::Display for DistributionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset {}", self.provenance)?;
        let w = self
            .per_label
            .keys()
            .map(|l| l.len())
            .max()
            .unwrap_or(5)
            .max(12);
        writeln!(
            f,
            "{:<w$} {:>8} {:>12} {:>12} {:>12} {:>6} {:>8} {:>6}",
            "label", "flows", "min_dur_ms", "mean_dur_ms", "max_dur_ms", "min_p", "mean_p", "max_p"
        )?;
        for (label, d) in &self.per_label {
            writeln!(
                f,
                "{:<w$} {:>8} {:>12.3} {:>12.3} {:>12.3} {:>6} {:>8.2} {:>6}",
                label,
                d.flows,
                d.min_duration_ms,
                d.mean_duration_ms,
                d.max_duration_ms,
                d.min_packets,
                d.mean_packets,
                d.max_packets
            )?;
        }
        writeln!(
            f,
            "benign {} / anomaly {} / total {}",
            self.benign_flows, self.anomaly_flows, self.total_flows
        )
    }
}
