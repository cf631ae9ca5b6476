//! Random Forest: bootstrap-sampled Gini trees with plurality voting.
//!
//! Tree `i` draws from `ChaCha8Rng::seed_from_u64(tree_seed(seed, i))`, so
//! serial and parallel training produce identical forests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::meter::FeatureVector;

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    Sqrt,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Fixed(m) => m,
        };
        m.clamp(1, n_features.max(1))
    }
}

impl fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxFeatures::Sqrt => f.write_str("sqrt"),
            MaxFeatures::Fixed(m) => write!(f, "{m}"),
        }
    }
}

impl Serialize for MaxFeatures {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MaxFeatures::Sqrt => s.serialize_str("sqrt"),
            MaxFeatures::Fixed(m) => s.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(m) => Ok(MaxFeatures::Fixed(m)),
            Raw::Text(s) if s == "sqrt" => Ok(MaxFeatures::Sqrt),
            Raw::Text(s) => s.parse().map(MaxFeatures::Fixed).map_err(|_| {
                serde::de::Error::custom(format!(
                    "max_features must be \"sqrt\" or an integer, got {s:?}"
                ))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig(
                "n_trees must be at least 1".into(),
            ));
        }
        if self.max_features == MaxFeatures::Fixed(0) {
            return Err(ForestError::InvalidConfig(
                "max_features must be at least 1".into(),
            ));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sub-seed of tree `i`: splitmix64 of `seed + (i + 1) * golden_gamma`.
pub fn tree_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add(
        (i as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gini impurity `1 - Σ pᵢ²` of a label multiset; 0 for an empty one.
pub fn gini<T: Ord>(labels: &[T]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    1.0 - counts
        .values()
        .map(|&c| (c as f64 / n).powi(2))
        .sum::<f64>()
}

/// A decision tree node. Rows go left iff `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        label: String,
    },
}

impl TreeNode {
    pub fn leaf(label: impl Into<String>) -> Self {
        TreeNode::Leaf {
            label: label.into(),
        }
    }

    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Internal {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn route(&self, x: &[f64]) -> &str {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label } => return label,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal {
                feature,
                left,
                right,
                ..
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }

    fn collect_labels<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            TreeNode::Leaf { label } => out.push(label),
            TreeNode::Internal { left, right, .. } => {
                left.collect_labels(out);
                right.collect_labels(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<TreeNode>,
    pub feature_schema: Vec<String>,
    /// Sorted, distinct training labels.
    pub label_set: Vec<String>,
    pub train_config: TrainConfig,
}

impl RandomForest {
    /// Trains on a dataset, growing trees in parallel.
    pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<Self, ForestError> {
        Self::fit(
            &ds.feature_rows(),
            &ds.labels(),
            ds.feature_schema.clone(),
            config,
            true,
        )
    }

    pub fn train_serial(ds: &Dataset, config: &TrainConfig) -> Result<Self, ForestError> {
        Self::fit(
            &ds.feature_rows(),
            &ds.labels(),
            ds.feature_schema.clone(),
            config,
            false,
        )
    }

    /// Trains on raw rows. The result does not depend on `parallel`.
    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[String],
        feature_schema: Vec<String>,
        config: &TrainConfig,
        parallel: bool,
    ) -> Result<Self, ForestError> {
        config.validate()?;
        if rows.is_empty() {
            return Err(ForestError::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(ForestError::SchemaMismatch(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let p = feature_schema.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(ForestError::SchemaMismatch(format!(
                "row has {} values, schema has {p}",
                r.len()
            )));
        }

        let mut label_set: Vec<String> = labels.to_vec();
        label_set.sort();
        label_set.dedup();
        let y: Vec<usize> = labels
            .iter()
            .map(|l| label_set.binary_search(l).unwrap())
            .collect();
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let data = TrainData {
            cols: &cols,
            y: &y,
            n_classes: label_set.len(),
            mtry: config.max_features.resolve(p),
            config,
        };

        let grow = |i: usize| {
            let root = data.grow_tree(tree_seed(config.seed, i));
            root.into_node(&label_set)
        };
        let trees: Vec<TreeNode> = if parallel {
            (0..config.n_trees).into_par_iter().map(grow).collect()
        } else {
            (0..config.n_trees).map(grow).collect()
        };
        Ok(Self {
            trees,
            feature_schema,
            label_set,
            train_config: config.clone(),
        })
    }

    /// Wraps hand-built trees.
    pub fn from_trees(
        trees: Vec<TreeNode>,
        feature_schema: Vec<String>,
    ) -> Result<Self, ForestError> {
        let f = Self {
            label_set: Vec::new(),
            trees,
            feature_schema,
            train_config: TrainConfig::default(),
        };
        f.checked()
    }

    fn checked(mut self) -> Result<Self, ForestError> {
        if self.trees.is_empty() {
            return Err(ForestError::SchemaMismatch(
                "a forest needs at least one tree".into(),
            ));
        }
        let p = self.feature_schema.len();
        if let Some(m) = self.trees.iter().filter_map(TreeNode::max_feature).max() {
            if m >= p {
                return Err(ForestError::SchemaMismatch(format!(
                    "tree uses feature {m}, schema has {p}"
                )));
            }
        }
        if self.label_set.is_empty() {
            let mut labels = Vec::new();
            for t in &self.trees {
                t.collect_labels(&mut labels);
            }
            let mut set: Vec<String> = labels.into_iter().map(str::to_string).collect();
            set.sort();
            set.dedup();
            self.label_set = set;
        }
        Ok(self)
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<&str, ForestError> {
        if x.len() != self.feature_schema.len() {
            return Err(ForestError::SchemaMismatch(format!(
                "row has {} values, forest expects {}",
                x.len(),
                self.feature_schema.len()
            )));
        }
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &self.trees {
            *votes.entry(t.route(x)).or_default() += 1;
        }
        // BTreeMap iterates labels ascending; strict > keeps the smallest on ties.
        let mut best = ("", 0);
        for (l, c) in votes {
            if c > best.1 {
                best = (l, c);
            }
        }
        Ok(best.0)
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<String, ForestError> {
        self.predict_row(&x.to_values()).map(str::to_string)
    }

    pub fn predict_batch(&self, xs: &[FeatureVector]) -> Result<Vec<String>, ForestError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<String>, ForestError> {
        rows.iter()
            .map(|r| self.predict_row(r).map(str::to_string))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, ForestError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let f = Self::deserialize(&mut de)?;
        de.end()?;
        f.checked()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| ForestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ForestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

// Internal tree with class indices; converted to labelled nodes at the end.
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf(usize),
}

impl Node {
    fn into_node(self, labels: &[String]) -> TreeNode {
        match self {
            Node::Leaf(c) => TreeNode::leaf(labels[c].clone()),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => TreeNode::split(
                feature,
                threshold,
                left.into_node(labels),
                right.into_node(labels),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Decrease in sample-weighted Gini impurity, per sample.
    pub gain: f64,
    pub n_left: usize,
}

struct TrainData<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    config: &'a TrainConfig,
}

/// `n · gini` for a class histogram with total `n`.
fn weighted_impurity(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

impl TrainData<'_> {
    fn grow_tree(&self, seed: u64) -> Node {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.y.len();
        let idx: Vec<usize> = if self.config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        self.grow(idx, 0, &mut rng)
    }

    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn grow(&self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let counts = self.counts(&idx);
        let label = majority(&counts);
        let pure = counts[label] == idx.len();
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < 2 * self.config.min_samples_leaf {
            return Node::Leaf(label);
        }
        let Some(s) = self.best_split(&idx, &counts, rng) else {
            return Node::Leaf(label);
        };
        let col = &self.cols[s.feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| col[i] <= s.threshold);
        debug_assert_eq!(l.len(), s.n_left);
        Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            left: Box::new(self.grow(l, depth + 1, rng)),
            right: Box::new(self.grow(r, depth + 1, rng)),
        }
    }

    /// Best split over a random feature subset of size `mtry`. When none of
    /// those features admits a valid split, further features are drawn until
    /// one does or all are exhausted.
    fn best_split(
        &self,
        idx: &[usize],
        counts: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Option<SplitChoice> {
        let mut order: Vec<usize> = (0..self.cols.len()).collect();
        order.shuffle(rng);
        let n = idx.len();
        let parent = weighted_impurity(counts, n);
        let min_leaf = self.config.min_samples_leaf;
        // (weighted child impurity, feature, threshold, n_left)
        let mut best: Option<(f64, usize, f64, usize)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut left = vec![0usize; self.n_classes];
        let mut right = vec![0usize; self.n_classes];
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            let col = &self.cols[f];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            left.iter_mut().for_each(|c| *c = 0);
            right.copy_from_slice(counts);
            for i in 0..n - 1 {
                let (v, c) = pairs[i];
                left[c] += 1;
                right[c] -= 1;
                let next = pairs[i + 1].0;
                if v == next {
                    continue;
                }
                let n_left = i + 1;
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let score =
                    weighted_impurity(&left, n_left) + weighted_impurity(&right, n - n_left);
                let threshold = midpoint(v, next);
                let better = match best {
                    None => true,
                    Some((s, bf, bt, _)) => score < s || (score == s && (f, threshold) < (bf, bt)),
                };
                if better {
                    best = Some((score, f, threshold, n_left));
                }
            }
        }
        best.map(|(score, feature, threshold, n_left)| SplitChoice {
            feature,
            threshold,
            gain: (parent - score) / n as f64,
            n_left,
        })
    }
}

#[cfg(test)]
pub(crate) fn best_split_for_test(
    rows: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let p = rows.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect();
    let config = TrainConfig {
        min_samples_leaf,
        ..TrainConfig::default()
    };
    let data = TrainData {
        cols: &cols,
        y,
        n_classes,
        mtry: p,
        config: &config,
    };
    let idx: Vec<usize> = (0..y.len()).collect();
    let counts = data.counts(&idx);
    data.best_split(&idx, &counts, &mut ChaCha8Rng::seed_from_u64(1))
}
