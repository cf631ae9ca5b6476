use earlyflow::forest::{RandomForest, TreeNode};
use earlyflow::meter::{feature_names, FeatureVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Explicit tree description walked by hand: (feature, threshold, left, right)
/// with negative child indices naming leaves.
struct Flat {
    nodes: Vec<(usize, f64, i32, i32)>,
    leaves: Vec<&'static str>,
}

impl Flat {
    fn walk(&self, x: &[f64]) -> &'static str {
        let mut i = 0i32;
        loop {
            if i < 0 {
                return self.leaves[(-i - 1) as usize];
            }
            let (f, t, l, r) = self.nodes[i as usize];
            i = if x[f] <= t { l } else { r };
        }
    }

    fn to_tree(&self, i: i32) -> TreeNode {
        if i < 0 {
            return TreeNode::leaf(self.leaves[(-i - 1) as usize]);
        }
        let (f, t, l, r) = self.nodes[i as usize];
        TreeNode::split(f, t, self.to_tree(l), self.to_tree(r))
    }
}

fn vote(a: &str, b: &str) -> String {
    // Two trees: agreement wins, otherwise the smaller label.
    if a <= b { a } else { b }.to_string()
}

#[test]
fn hand_built_two_tree_forest_matches_tree_walk() {
    let t1 = Flat {
        nodes: vec![(0, 10.0, 1, 2), (5, 0.5, -1, -2), (17, 250.0, -2, -3)],
        leaves: vec!["BENIGN", "DoS", "PortScan"],
    };
    let t2 = Flat {
        nodes: vec![(45, 1.0, 1, -3), (0, 3.0, -1, -2)],
        leaves: vec!["DoS", "BENIGN", "PortScan"],
    };
    let forest =
        RandomForest::from_trees(vec![t1.to_tree(0), t2.to_tree(0)], feature_names()).unwrap();
    let names = feature_names();
    assert_eq!(
        (names[5].as_str(), names[17].as_str()),
        ("bidirectional_mean_ps", "src2dst_max_ps")
    );
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut xs = Vec::new();
    for _ in 0..100 {
        let mut v = vec![0.0; feature_names().len()];
        v[0] = rng.gen_range(0.0..20.0);
        v[5] = rng.gen_range(0.0..1.0);
        v[17] = rng.gen_range(0.0f64..500.0).round();
        v[45] = rng.gen_range(0..3) as f64;
        xs.push(FeatureVector::from_values(&v).unwrap());
    }
    let batch = forest.predict_batch(&xs).unwrap();
    for (x, b) in xs.iter().zip(&batch) {
        let v = x.to_values();
        let want = vote(t1.walk(&v), t2.walk(&v));
        assert_eq!(forest.predict(x).unwrap(), want);
        assert_eq!(b, &want);
    }
    let back = RandomForest::from_json(&forest.to_json().unwrap()).unwrap();
    assert_eq!(back.predict_batch(&xs).unwrap(), batch);
}

#[test]
fn three_trees_take_the_majority() {
    let trees = vec![
        TreeNode::leaf("A"),
        TreeNode::leaf("B"),
        TreeNode::leaf("B"),
    ];
    let forest = RandomForest::from_trees(trees, feature_names()).unwrap();
    assert_eq!(forest.predict(&FeatureVector::default()).unwrap(), "B");
}
