use std::collections::{BTreeMap, HashMap, HashSet};

use super::{Dataset, DatasetError, LabeledFlow, Provenance};
use crate::labeling::{label_flow, RuleSet};
use crate::meter::{FlowRecord, FlowSnapshot, Trigger};

/// Classes with fewer surviving flows than this are dropped from CF datasets.
pub const DEFAULT_MIN_CLASS_COUNT: usize = 50;

/// Builds the complete-flow dataset.
///
/// In order: label every record, drop zero-payload flows, keep only the first
/// record of each flow hash, then drop classes with fewer than
/// `min_class_count` flows.
pub fn build_cf(records: &[FlowRecord], rules: &RuleSet, min_class_count: usize) -> Dataset {
    let mut seen = HashSet::with_capacity(records.len());
    let survivors: Vec<LabeledFlow> = records
        .iter()
        .filter(|r| r.features.bidirectional.payload_bytes > 0)
        .filter(|r| seen.insert(r.id.hash64))
        .map(|r| LabeledFlow {
            id: r.id,
            features: r.features,
            label: label_flow(r, rules).to_string(),
        })
        .collect();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &survivors {
        *counts.entry(f.label.as_str()).or_default() += 1;
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_class_count)
        .map(|(l, _)| l.to_string())
        .collect();

    Dataset::new(
        Provenance::Complete,
        survivors
            .into_iter()
            .filter(|f| keep.contains(&f.label))
            .collect(),
    )
}

/// Builds the partial-flow dataset for one trigger.
///
/// Keeps snapshots of `trigger` whose parent is in `cf` (first snapshot per
/// parent hash); each inherits its parent's label.
pub fn build_pf(
    snapshots: &[FlowSnapshot],
    cf: &Dataset,
    trigger: Trigger,
) -> Result<Dataset, DatasetError> {
    if cf.provenance != Provenance::Complete {
        return Err(DatasetError::NotComplete(cf.provenance));
    }
    let parents: HashMap<u64, &str> = cf
        .flows
        .iter()
        .map(|f| (f.id.hash64, f.label.as_str()))
        .collect();
    let mut taken = HashSet::new();
    let flows = snapshots
        .iter()
        .filter(|s| s.trigger == trigger)
        .filter_map(|s| {
            let label = parents.get(&s.parent_id.hash64)?;
            taken.insert(s.parent_id.hash64).then(|| LabeledFlow {
                id: s.parent_id,
                features: s.features,
                label: label.to_string(),
            })
        })
        .collect();
    Ok(Dataset::new(Provenance::Partial(trigger), flows))
}

/// Restricts `cf` and `pf` to their common flow hashes.
///
/// With `pf` built from `cf` this leaves `pf` unchanged and cuts `cf` down to
/// the flows that reached the partial trigger.
pub fn align(cf: &Dataset, pf: &Dataset) -> Result<(Dataset, Dataset), DatasetError> {
    if cf.provenance != Provenance::Complete {
        return Err(DatasetError::NotComplete(cf.provenance));
    }
    let pf_keys = pf.keys();
    let cf_keys = cf.keys();
    Ok((
        cf.filter_keys(|k| pf_keys.contains(&k)),
        pf.filter_keys(|k| cf_keys.contains(&k)),
    ))
}
