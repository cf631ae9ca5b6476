use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::Dataset;

pub const DEFAULT_SPLIT_RATIO: f64 = 0.70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_keys: BTreeSet<u64>,
    pub test_keys: BTreeSet<u64>,
    pub ratio: f64,
    pub seed: u64,
    /// Labels with fewer than two flows; placed wholly in train.
    pub degenerate_labels: Vec<String>,
}

impl Split {
    pub fn is_train(&self, hash: u64) -> bool {
        self.train_keys.contains(&hash)
    }

    pub fn is_test(&self, hash: u64) -> bool {
        self.test_keys.contains(&hash)
    }
}

/// Deterministic per-label stratified key split.
///
/// Labels are visited in sorted order; each label's distinct hashes are
/// sorted, shuffled with one shared seeded RNG, and the first
/// `round(ratio · n)` (clamped to `1..n`) go to train.
pub fn split_keys(cf: &Dataset, ratio: f64, seed: u64) -> Result<Split, EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let mut by_label: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for f in &cf.flows {
        by_label
            .entry(f.label.as_str())
            .or_default()
            .insert(f.id.hash64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train_keys: BTreeSet::new(),
        test_keys: BTreeSet::new(),
        ratio,
        seed,
        degenerate_labels: Vec::new(),
    };
    for (label, keys) in by_label {
        // A hash already assigned under another label stays where it is.
        let mut keys: Vec<u64> = keys
            .into_iter()
            .filter(|k| !split.train_keys.contains(k) && !split.test_keys.contains(k))
            .collect();
        let n = keys.len();
        if n < 2 {
            split.degenerate_labels.push(label.to_string());
            split.train_keys.extend(keys);
            continue;
        }
        keys.shuffle(&mut rng);
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        split.train_keys.extend(&keys[..n_train]);
        split.test_keys.extend(&keys[n_train..]);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledFlow, Provenance};
    use crate::meter::{Endpoint, FeatureVector, FlowId, FlowKey};

    fn ds(counts: &[(&str, u16)]) -> Dataset {
        let mut flows = Vec::new();
        let mut port = 1;
        for &(label, n) in counts {
            for _ in 0..n {
                let key = FlowKey::new(
                    Endpoint::new("10.0.0.1".parse().unwrap(), port),
                    Endpoint::new("10.0.0.2".parse().unwrap(), 80),
                    6,
                );
                port += 1;
                flows.push(LabeledFlow {
                    id: FlowId::new(key, 0),
                    features: FeatureVector::default(),
                    label: label.into(),
                });
            }
        }
        Dataset::new(Provenance::Complete, flows)
    }

    #[test]
    fn exact_stratification() {
        let d = ds(&[("A", 10), ("B", 10)]);
        let s = split_keys(&d, 0.7, 1).unwrap();
        let train_a = d
            .flows
            .iter()
            .filter(|f| f.label == "A" && s.is_train(f.id.hash64))
            .count();
        let train_b = d
            .flows
            .iter()
            .filter(|f| f.label == "B" && s.is_train(f.id.hash64))
            .count();
        assert_eq!((train_a, train_b), (7, 7));
        assert_eq!(s.test_keys.len(), 6);
        assert!(s.train_keys.is_disjoint(&s.test_keys));
        assert_eq!(split_keys(&d, 0.7, 1).unwrap(), s);
        assert_ne!(split_keys(&d, 0.7, 2).unwrap().train_keys, s.train_keys);
    }

    #[test]
    fn degenerate_label_goes_to_train() {
        let d = ds(&[("A", 10), ("rare", 1)]);
        let s = split_keys(&d, 0.7, 0).unwrap();
        assert_eq!(s.degenerate_labels, vec!["rare".to_string()]);
        let rare = d.flows.iter().find(|f| f.label == "rare").unwrap();
        assert!(s.is_train(rare.id.hash64));
    }

    #[test]
    fn bad_ratio() {
        for r in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(
                split_keys(&ds(&[]), r, 0),
                Err(EvalError::InvalidRatio(_))
            ));
        }
    }
}
