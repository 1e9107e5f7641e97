//! Second-order regression trees for gradient boosting.
//!
//! Trees grow depth-wise by exact sorted scans over unique feature values.
//! A split (feature j, cutoff c) is scored by the second-order gain
//!
//! ```text
//! gain = 1/2 [ GL^2/(HL + lambda) + GR^2/(HR + lambda) - G^2/(H + lambda) ]
//! ```
//!
//! and each leaf takes the regularized Newton value -G/(H + lambda).
//! Ties break deterministically toward the lowest feature index, then the
//! lowest threshold, so identical inputs always build identical trees.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("gradient array length {got} does not match row count {expected}")]
    GradientLength { got: usize, expected: usize },
    #[error("no rows to fit")]
    NoRows,
    #[error("invalid boosting configuration: {0}")]
    BadConfig(&'static str),
}

/// Boosting hyperparameters shared by tree construction and the trainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Total tree budget T.
    pub n_trees: usize,
    /// Shrinkage applied to every tree's contribution.
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub l2_lambda: f64,
    /// Maximum number of split levels; 1 allows a single root split.
    pub max_depth: usize,
    /// Minimum rows on each side of a split.
    pub min_samples_leaf: usize,
    /// Per-row lower clamp applied to Hessians before aggregation.
    pub hessian_floor: f64,
    /// Magnitude cap on leaf values. Newton steps blow up when a leaf's
    /// loss is locally near-linear (vanishing curvature, e.g. the linked
    /// objective at extreme gamma); the cap keeps scores finite while the
    /// boosting path self-corrects.
    pub max_leaf: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            learning_rate: 0.05,
            l2_lambda: 0.0,
            max_depth: 10,
            min_samples_leaf: 1,
            hessian_floor: 1e-16,
            max_leaf: 20.0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.n_trees == 0 {
            return Err(TreeError::BadConfig("n_trees must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(TreeError::BadConfig("learning_rate must lie in (0, 1]"));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(TreeError::BadConfig("l2_lambda must be non-negative"));
        }
        if self.max_depth == 0 {
            return Err(TreeError::BadConfig("max_depth must be at least 1"));
        }
        if !(self.hessian_floor > 0.0) {
            return Err(TreeError::BadConfig("hessian_floor must be positive"));
        }
        if !(self.max_leaf > 0.0) {
            return Err(TreeError::BadConfig("max_leaf must be positive"));
        }
        Ok(())
    }
}

/// Fully numeric feature view: categorical columns arrive already encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(
            columns.iter().all(|c| c.len() == n_rows),
            "ragged feature matrix"
        );
        assert_eq!(names.len(), columns.len());
        Self {
            names,
            columns,
            n_rows,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

/// Tree node; children index into the tree's node vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree with raw (unshrunk) leaf values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn from_nodes(nodes: Vec<TreeNode>) -> Self {
        Self { nodes }
    }

    /// Leaf value reached by one row of the feature matrix.
    pub fn predict_row(&self, features: &FeatureMatrix, row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if features.value(row, *feature) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// True when the tree is a single leaf.
    pub fn is_stump(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Sum of split gains per feature.
    pub fn accumulate_gains(&self, gains: &mut [f64]) {
        for node in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = node {
                gains[*feature] += *gain;
            }
        }
    }
}

/// Best split candidate of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[inline]
fn leaf_objective(g: f64, h: f64, lambda: f64) -> f64 {
    -0.5 * g * g / (h + lambda)
}

/// Exact best split of a row subset for one feature: sorted scan over
/// unique values, thresholds at midpoints. Returns `None` when no split
/// satisfies `min_samples_leaf` or improves the objective.
fn best_split_for_feature(
    feature: usize,
    values: &[f64],
    rows: &[usize],
    grads: &[(f64, f64)],
    lambda: f64,
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * min_samples_leaf.max(1) {
        return None;
    }
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite feature values")
    });

    let (mut g_total, mut h_total) = (0.0, 0.0);
    for &r in &order {
        g_total += grads[r].0;
        h_total += grads[r].1;
    }
    let parent = leaf_objective(g_total, h_total, lambda);

    let mut best: Option<SplitCandidate> = None;
    let (mut g_left, mut h_left) = (0.0, 0.0);
    for i in 0..n - 1 {
        let r = order[i];
        g_left += grads[r].0;
        h_left += grads[r].1;
        let v = values[r];
        let v_next = values[order[i + 1]];
        if v == v_next {
            continue;
        }
        let left_count = i + 1;
        let right_count = n - left_count;
        if left_count < min_samples_leaf || right_count < min_samples_leaf {
            continue;
        }
        let g_right = g_total - g_left;
        let h_right = h_total - h_left;
        let gain =
            leaf_objective(g_left, h_left, lambda) + leaf_objective(g_right, h_right, lambda)
                - parent;
        // gain defined as parent loss minus children loss
        let gain = -gain;
        if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                feature,
                threshold: (v + v_next) / 2.0,
                gain,
            });
        }
    }
    best
}

/// Best split across all features with deterministic tie-breaking.
pub fn best_split(
    features: &FeatureMatrix,
    rows: &[usize],
    grads: &[(f64, f64)],
    lambda: f64,
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let candidates: Vec<Option<SplitCandidate>> = (0..features.n_features())
        .into_par_iter()
        .map(|f| {
            best_split_for_feature(f, features.column(f), rows, grads, lambda, min_samples_leaf)
        })
        .collect();
    let mut best: Option<SplitCandidate> = None;
    for cand in candidates.into_iter().flatten() {
        let replace = match best {
            None => true,
            // strictly greater gain wins; scan order already prefers the
            // lower feature index and lower threshold on exact ties
            Some(b) => cand.gain > b.gain,
        };
        if replace {
            best = Some(cand);
        }
    }
    best
}

/// Fit one second-order regression tree.
///
/// `grads` holds raw per-row (g, h); Hessians are clamped at
/// `config.hessian_floor` here before any aggregation. Growth is
/// depth-wise and stops at `max_depth`, `min_samples_leaf`, or when no
/// split improves the objective; a splitless root yields a single-leaf
/// tree.
pub fn fit_tree(
    grads: &[(f64, f64)],
    features: &FeatureMatrix,
    rows: &[usize],
    config: &BoostConfig,
) -> Result<DecisionTree, TreeError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(TreeError::NoRows);
    }
    if grads.len() != features.n_rows() {
        return Err(TreeError::GradientLength {
            got: grads.len(),
            expected: features.n_rows(),
        });
    }
    let floored: Vec<(f64, f64)> = grads
        .iter()
        .map(|&(g, h)| (g, h.max(config.hessian_floor)))
        .collect();

    struct Pending {
        node_index: usize,
        rows: Vec<usize>,
        depth: usize,
    }

    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut queue = vec![Pending {
        node_index: 0,
        rows: rows.to_vec(),
        depth: 0,
    }];

    while let Some(task) = queue.pop() {
        let leaf_value = {
            let (mut g, mut h) = (0.0, 0.0);
            for &r in &task.rows {
                g += floored[r].0;
                h += floored[r].1;
            }
            (-g / (h + config.l2_lambda)).clamp(-config.max_leaf, config.max_leaf)
        };
        let candidate = if task.depth < config.max_depth {
            best_split(
                features,
                &task.rows,
                &floored,
                config.l2_lambda,
                config.min_samples_leaf,
            )
        } else {
            None
        };
        match candidate {
            None => {
                nodes[task.node_index] = TreeNode::Leaf { value: leaf_value };
            }
            Some(split) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = task
                    .rows
                    .iter()
                    .partition(|&&r| features.value(r, split.feature) <= split.threshold);
                let left = nodes.len();
                nodes.push(TreeNode::Leaf { value: 0.0 });
                let right = nodes.len();
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes[task.node_index] = TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                    gain: split.gain,
                };
                queue.push(Pending {
                    node_index: left,
                    rows: left_rows,
                    depth: task.depth + 1,
                });
                queue.push(Pending {
                    node_index: right,
                    rows: right_rows,
                    depth: task.depth + 1,
                });
            }
        }
    }
    Ok(DecisionTree { nodes })
}

/// Ensemble score W(x_i) = sum_t learning_rate * w_t(x_i).
///
/// The exposure offset is applied by callers when mapping scores to means.
pub fn predict_score(
    trees: &[DecisionTree],
    learning_rate: f64,
    features: &FeatureMatrix,
    rows: &[usize],
) -> Vec<f64> {
    let mut scores = vec![0.0; rows.len()];
    for tree in trees {
        for (s, &row) in scores.iter_mut().zip(rows) {
            *s += learning_rate * tree.predict_row(features, row);
        }
    }
    scores
}

/// Gain-based feature importance normalized to sum to 100.
///
/// Returns the per-feature shares and whether any split existed; a
/// splitless ensemble reports all zeros.
pub fn feature_importance(trees: &[DecisionTree], n_features: usize) -> (Vec<f64>, bool) {
    let mut gains = vec![0.0; n_features];
    for t in trees {
        t.accumulate_gains(&mut gains);
    }
    let total: f64 = gains.iter().sum();
    if total <= 0.0 {
        return (vec![0.0; n_features], false);
    }
    (gains.iter().map(|g| 100.0 * g / total).collect(), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config(lambda: f64, max_depth: usize) -> BoostConfig {
        BoostConfig {
            n_trees: 1,
            learning_rate: 1.0,
            l2_lambda: lambda,
            max_depth,
            min_samples_leaf: 1,
            hessian_floor: 1e-16,
            max_leaf: 20.0,
        }
    }

    fn matrix(cols: Vec<Vec<f64>>) -> FeatureMatrix {
        let names = (0..cols.len()).map(|i| format!("f{i}")).collect();
        FeatureMatrix::new(names, cols)
    }

    #[test]
    fn hand_checked_root_split() {
        // g = (-1,-1,+1,+1) aligned with a binary feature, h = 1, lambda=0:
        // split at the midpoint, leaves +1 (left) and -1 (right).
        let features = matrix(vec![vec![0.0, 0.0, 1.0, 1.0]]);
        let grads = vec![(-1.0, 1.0), (-1.0, 1.0), (1.0, 1.0), (1.0, 1.0)];
        let tree = fit_tree(&grads, &features, &[0, 1, 2, 3], &config(0.0, 3)).unwrap();
        match tree.nodes()[0] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                gain,
            } => {
                assert_eq!(feature, 0);
                assert_relative_eq!(threshold, 0.5, epsilon = 0.0);
                assert_relative_eq!(gain, 2.0, epsilon = 1e-15);
                match (&tree.nodes()[left], &tree.nodes()[right]) {
                    (TreeNode::Leaf { value: l }, TreeNode::Leaf { value: r }) => {
                        assert_relative_eq!(*l, 1.0, epsilon = 1e-15);
                        assert_relative_eq!(*r, -1.0, epsilon = 1e-15);
                    }
                    _ => panic!("children should be leaves"),
                }
            }
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn large_lambda_shrinks_leaves_to_zero() {
        let features = matrix(vec![vec![0.0, 1.0, 2.0, 3.0]]);
        let grads = vec![(2.0, 1.0), (-3.0, 1.0), (1.0, 1.0), (-0.5, 1.0)];
        let tree = fit_tree(&grads, &features, &[0, 1, 2, 3], &config(1e12, 3)).unwrap();
        for node in tree.nodes() {
            if let TreeNode::Leaf { value } = node {
                assert!(value.abs() < 1e-10, "leaf {value}");
            }
        }
    }

    #[test]
    fn leaf_value_matches_golden_section_minimum() {
        // The closed-form leaf must minimize sum[g a + h a^2 / 2] + lambda a^2 / 2.
        // Golden section brackets the minimum; a parabolic vertex through
        // three bracket points then pins it to machine precision (value
        // comparisons alone cannot resolve a quadratic below sqrt(eps)).
        let g_sum: f64 = 1.7 - 0.4 + 2.2;
        let h_sum: f64 = 0.9 + 1.1 + 0.3;
        let lambda = 2.5;
        let closed = -g_sum / (h_sum + lambda);
        let objective = |a: f64| g_sum * a + 0.5 * h_sum * a * a + 0.5 * lambda * a * a;
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..30 {
            let m1 = hi - inv_phi * (hi - lo);
            let m2 = lo + inv_phi * (hi - lo);
            if objective(m1) < objective(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let (a, b, c) = (lo - 1.0, (lo + hi) / 2.0, hi + 1.0);
        let (fa, fb, fc) = (objective(a), objective(b), objective(c));
        let num = (b - a) * (b - a) * (fb - fc) - (b - c) * (b - c) * (fb - fa);
        let den = (b - a) * (fb - fc) - (b - c) * (fb - fa);
        let vertex = b - 0.5 * num / den;
        assert_relative_eq!(closed, vertex, epsilon = 1e-10);
    }

    #[test]
    fn no_split_improvement_returns_single_leaf() {
        // Constant feature: no threshold exists.
        let features = matrix(vec![vec![1.0; 4]]);
        let grads = vec![(1.0, 1.0), (-1.0, 1.0), (0.5, 1.0), (-0.5, 1.0)];
        let tree = fit_tree(&grads, &features, &[0, 1, 2, 3], &config(0.0, 3)).unwrap();
        assert!(tree.is_stump());
        match tree.nodes()[0] {
            TreeNode::Leaf { value } => assert_relative_eq!(value, 0.0, epsilon = 1e-15),
            _ => panic!("expected leaf"),
        }
    }

    #[test]
    fn min_samples_leaf_blocks_unbalanced_split() {
        let features = matrix(vec![vec![0.0, 1.0, 1.0, 1.0]]);
        let grads = vec![(5.0, 1.0), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)];
        let mut cfg = config(0.0, 3);
        cfg.min_samples_leaf = 2;
        let tree = fit_tree(&grads, &features, &[0, 1, 2, 3], &cfg).unwrap();
        assert!(tree.is_stump(), "split would isolate a single row");
    }

    #[test]
    fn deterministic_across_refits() {
        let features = matrix(vec![
            vec![0.3, 0.1, 0.8, 0.5, 0.9, 0.2],
            vec![1.0, 2.0, 0.5, 0.7, 0.1, 0.4],
        ]);
        let grads = vec![
            (0.3, 0.9),
            (-0.7, 1.2),
            (1.1, 0.8),
            (0.2, 1.0),
            (-0.9, 1.1),
            (0.5, 0.7),
        ];
        let rows: Vec<usize> = (0..6).collect();
        let a = fit_tree(&grads, &features, &rows, &config(1.0, 4)).unwrap();
        let b = fit_tree(&grads, &features, &rows, &config(1.0, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_score_sums_shrunk_leaves() {
        let features = matrix(vec![vec![0.0, 1.0]]);
        let stump = DecisionTree::from_nodes(vec![TreeNode::Split {
            feature: 0,
            threshold: 0.5,
            left: 1,
            right: 2,
            gain: 1.0,
        }, TreeNode::Leaf { value: 2.0 }, TreeNode::Leaf { value: -4.0 }]);
        let constant = DecisionTree::from_nodes(vec![TreeNode::Leaf { value: 10.0 }]);
        let scores = predict_score(&[stump, constant], 0.1, &features, &[0, 1]);
        assert_relative_eq!(scores[0], 0.1 * 2.0 + 1.0, epsilon = 1e-15);
        assert_relative_eq!(scores[1], 0.1 * -4.0 + 1.0, epsilon = 1e-15);

        let empty: Vec<DecisionTree> = Vec::new();
        assert_eq!(predict_score(&empty, 0.1, &features, &[0, 1]), vec![0.0, 0.0]);
    }

    #[test]
    fn importance_normalizes_to_hundred() {
        let split = |feature: usize, gain: f64| {
            DecisionTree::from_nodes(vec![
                TreeNode::Split {
                    feature,
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                    gain,
                },
                TreeNode::Leaf { value: 0.0 },
                TreeNode::Leaf { value: 0.0 },
            ])
        };
        let (imp, has) = feature_importance(&[split(0, 3.0), split(1, 1.0)], 2);
        assert!(has);
        assert_relative_eq!(imp[0], 75.0, epsilon = 1e-12);
        assert_relative_eq!(imp[1], 25.0, epsilon = 1e-12);

        let (imp, _) = feature_importance(&[split(0, 2.0), split(1, 2.0)], 2);
        assert_relative_eq!(imp[0], 50.0, epsilon = 1e-12);
        assert_relative_eq!(imp[1], 50.0, epsilon = 1e-12);

        let (imp, has) = feature_importance(&[split(0, 1.0)], 2);
        assert!(has);
        assert_eq!(imp, vec![100.0, 0.0]);

        let leaf_only = DecisionTree::from_nodes(vec![TreeNode::Leaf { value: 1.0 }]);
        let (imp, has) = feature_importance(&[leaf_only], 2);
        assert!(!has);
        assert_eq!(imp, vec![0.0, 0.0]);
    }

    #[test]
    fn exhaustive_micro_oracle_agreement() {
        // Every (feature, threshold) pair enumerated directly must agree
        // with the engine's chosen gain on small instances.
        let features = matrix(vec![
            vec![0.25, 0.75, 0.5, 1.0, 0.0],
            vec![1.0, 0.25, 0.75, 0.5, 0.0],
        ]);
        let grads = vec![
            (0.5, 1.0),
            (-1.25, 0.75),
            (2.0, 0.5),
            (0.25, 1.25),
            (-0.75, 1.0),
        ];
        let rows: Vec<usize> = (0..5).collect();
        let lambda = 0.5;
        let engine = best_split(&features, &rows, &grads, lambda, 1).unwrap();

        let mut best_gain = f64::NEG_INFINITY;
        for f in 0..2 {
            let mut vals: Vec<f64> = rows.iter().map(|&r| features.value(r, f)).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let c = (w[0] + w[1]) / 2.0;
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for &r in &rows {
                    if features.value(r, f) <= c {
                        gl += grads[r].0;
                        hl += grads[r].1;
                    } else {
                        gr += grads[r].0;
                        hr += grads[r].1;
                    }
                }
                let g = gl + gr;
                let h = hl + hr;
                let gain = 0.5
                    * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda)
                        - g * g / (h + lambda));
                best_gain = best_gain.max(gain);
            }
        }
        assert_relative_eq!(engine.gain, best_gain, epsilon = 1e-12);
    }
}
