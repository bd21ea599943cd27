//! Quantile regression forest.
//!
//! Each tree assigns a query the uniform weight 1/k over the k members of
//! its leaf; averaging the per-tree weights over the ensemble gives the
//! forest weight vector, which defines a weighted empirical conditional CDF
//! of the training responses. Quantiles are read off that CDF.

mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::OfflineDataset;
use crate::rng::StreamId;

pub use tree::{fit_tree, tree_weights, FittedTree, TreeNode};

/// Forest hyperparameters.
///
/// `mtry` and `min_node_size` default per fit: ceil(d/3) features per split,
/// and 5 (plain) or 10 (honest) samples per leaf.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    /// Number of trees in the ensemble.
    pub n_trees: usize,
    /// Features tried per split; `None` resolves to ceil(d/3).
    pub mtry: Option<usize>,
    /// Minimum samples per leaf; `None` resolves to 5 (plain) or 10 (honest).
    pub min_node_size: Option<usize>,
    /// Leaves larger than this fraction of n are split whenever an
    /// admissible split exists, regardless of gain. 1.0 disables the rule.
    pub max_leaf_fraction: f64,
    /// Minimum child/parent sample ratio per split.
    pub min_child_fraction: f64,
    /// Build structure on one half of the sample, estimate on the other.
    pub honest: bool,
    /// Bootstrap-resample each tree's sample.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_node_size: None,
            max_leaf_fraction: 1.0,
            min_child_fraction: 0.1,
            honest: false,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| d.div_ceil(3))
    }

    pub fn resolved_min_node_size(&self) -> usize {
        self.min_node_size.unwrap_or(if self.honest { 10 } else { 5 })
    }

    pub(crate) fn resolve(&self, n: usize, d: usize) -> Result<TreeParams> {
        if self.n_trees < 1 {
            return Err(Error::invalid_config("n_trees", "need at least one tree"));
        }
        let mtry = self.resolved_mtry(d);
        if mtry < 1 || mtry > d {
            return Err(Error::invalid_config(
                "mtry",
                format!("must be in [1, {d}], got {mtry}"),
            ));
        }
        let min_node_size = self.resolved_min_node_size();
        if min_node_size < 1 {
            return Err(Error::invalid_config("min_node_size", "must be >= 1"));
        }
        if !(self.min_child_fraction > 0.0 && self.min_child_fraction <= 0.5) {
            return Err(Error::invalid_config(
                "min_child_fraction",
                format!("must be in (0, 0.5], got {}", self.min_child_fraction),
            ));
        }
        if !(self.max_leaf_fraction > 0.0 && self.max_leaf_fraction <= 1.0) {
            return Err(Error::invalid_config(
                "max_leaf_fraction",
                format!("must be in (0, 1], got {}", self.max_leaf_fraction),
            ));
        }
        let max_leaf_count = ((self.max_leaf_fraction * n as f64).floor() as usize).max(1);
        Ok(TreeParams {
            mtry,
            min_node_size,
            max_leaf_count,
            min_child_fraction: self.min_child_fraction,
            honest: self.honest,
            bootstrap: self.bootstrap,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TreeParams {
    pub mtry: usize,
    pub min_node_size: usize,
    pub max_leaf_count: usize,
    pub min_child_fraction: f64,
    pub honest: bool,
    pub bootstrap: bool,
}

/// A fitted quantile regression forest. Immutable; safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    d: usize,
    responses: Vec<f64>,
    /// Training indices in ascending response order; fixes the quantile scan.
    sorted_order: Vec<u32>,
    trees: Vec<FittedTree>,
    config: ForestConfig,
}

impl Forest {
    /// Fit on an offline dataset. Trees fit in parallel; tree `b` draws from
    /// the `("tree", b)` sub-stream of `config.seed`, so the forest is
    /// identical for any thread count.
    pub fn fit(dataset: &OfflineDataset, config: &ForestConfig) -> Result<Forest> {
        Self::fit_xy(dataset.features(), dataset.dim(), dataset.losses(), config)
    }

    /// Fit on a raw row-major feature matrix and response vector.
    pub fn fit_xy(x: &[f64], d: usize, y: &[f64], config: &ForestConfig) -> Result<Forest> {
        if y.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.len() != y.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} values, expected {} x {}",
                x.len(),
                y.len(),
                d
            )));
        }
        let params = config.resolve(y.len(), d)?;
        let stream = StreamId::root(config.seed).label("tree");
        let trees: Vec<FittedTree> = (0..config.n_trees)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream.index(b as u64).rng();
                tree::fit_tree_with(x, d, y, &params, &mut rng)
            })
            .collect();
        Ok(Self::from_parts(d, y.to_vec(), trees, config.clone()))
    }

    pub(crate) fn from_parts(
        d: usize,
        responses: Vec<f64>,
        trees: Vec<FittedTree>,
        config: ForestConfig,
    ) -> Forest {
        let mut sorted_order: Vec<u32> = (0..responses.len() as u32).collect();
        sorted_order.sort_by(|&a, &b| responses[a as usize].total_cmp(&responses[b as usize]));
        Forest {
            d,
            responses,
            sorted_order,
            trees,
            config,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_training(&self) -> usize {
        self.responses.len()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn trees(&self) -> &[FittedTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    /// Mean and maximum leaf size across all trees.
    pub fn leaf_stats(&self) -> (f64, usize) {
        let mut total = 0usize;
        let mut count = 0usize;
        let mut largest = 0usize;
        for tree in &self.trees {
            tree.root.for_each_leaf(&mut |members| {
                total += members.len();
                largest = largest.max(members.len());
                count += 1;
            });
        }
        (total as f64 / count as f64, largest)
    }

    fn check_query(&self, query: &[f64]) {
        assert_eq!(
            query.len(),
            self.d,
            "query has dimension {}, forest expects {}",
            query.len(),
            self.d
        );
    }

    /// Forest weights at a query: the across-tree average of per-tree leaf
    /// weights. Nonnegative, sums to one.
    pub fn weights(&self, query: &[f64]) -> Vec<f64> {
        self.check_query(query);
        let mut weights = vec![0.0; self.responses.len()];
        let tree_share = 1.0 / self.trees.len() as f64;
        for tree in &self.trees {
            let members = tree.root.leaf_members(query);
            let share = tree_share / members.len() as f64;
            for &idx in members {
                weights[idx as usize] += share;
            }
        }
        weights
    }

    /// Estimated conditional alpha-quantile: the smallest response at which
    /// the weighted ECDF reaches alpha.
    pub fn predict_quantile(&self, query: &[f64], alpha: f64) -> f64 {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
        let weights = self.weights(query);
        let mut cumulative = 0.0;
        for &idx in &self.sorted_order {
            cumulative += weights[idx as usize];
            if cumulative >= alpha {
                return self.responses[idx as usize];
            }
        }
        // total weight is 1 up to rounding; alpha < 1 lands above only
        // through that rounding, in which case the top response is the inf
        self.responses[*self.sorted_order.last().expect("nonempty") as usize]
    }

    /// Quantiles at several levels from one weight evaluation.
    pub fn predict_quantiles(&self, query: &[f64], alphas: &[f64]) -> Vec<f64> {
        let weights = self.weights(query);
        let mut out = vec![f64::NAN; alphas.len()];
        let mut level_order: Vec<usize> = (0..alphas.len()).collect();
        level_order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
        let mut cumulative = 0.0;
        let mut level_pos = 0;
        for &idx in &self.sorted_order {
            cumulative += weights[idx as usize];
            while level_pos < level_order.len() && cumulative >= alphas[level_order[level_pos]] {
                out[level_order[level_pos]] = self.responses[idx as usize];
                level_pos += 1;
            }
            if level_pos == level_order.len() {
                break;
            }
        }
        let top = self.responses[*self.sorted_order.last().expect("nonempty") as usize];
        for slot in out.iter_mut() {
            if slot.is_nan() {
                *slot = top;
            }
        }
        out
    }

    /// Weighted ECDF at y: sum of weights of training points with response
    /// <= y. Right-continuous, nondecreasing, in [0, 1].
    pub fn predict_cdf(&self, query: &[f64], y: f64) -> f64 {
        let weights = self.weights(query);
        let mut mass = 0.0;
        for &idx in &self.sorted_order {
            if self.responses[idx as usize] > y {
                break;
            }
            mass += weights[idx as usize];
        }
        mass.min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::empirical_quantile;

    fn toy_dataset(n: usize, d: usize, seed: u64) -> OfflineDataset {
        use rand::Rng;
        let mut rng = StreamId::root(seed).label("toy").rng();
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| x[i * d] * 2.0 + rng.gen_range(-0.5..0.5))
            .collect();
        OfflineDataset::from_parts(d, x, y, seed).unwrap()
    }

    fn root_only_forest(y: Vec<f64>, n_trees: usize) -> Forest {
        let n = y.len();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let config = ForestConfig {
            n_trees,
            mtry: Some(1),
            min_node_size: Some(n),
            bootstrap: false,
            ..ForestConfig::default()
        };
        Forest::fit_xy(&x, 1, &y, &config).unwrap()
    }

    #[test]
    fn single_root_tree_weights_are_uniform() {
        let forest = root_only_forest(vec![1.0, 2.0, 3.0, 4.0], 1);
        let w = forest.weights(&[0.3]);
        for &wi in &w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_root_trees_average_to_uniform() {
        let forest = root_only_forest(vec![5.0, 1.0, 3.0], 2);
        let w = forest.weights(&[0.0]);
        for &wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forest_weight_is_average_of_tree_weights() {
        // tree A concentrates on index 0, tree B on index 1
        let trees = vec![
            FittedTree {
                root: TreeNode::Leaf { members: vec![0] },
                honest_split: None,
            },
            FittedTree {
                root: TreeNode::Leaf { members: vec![1] },
                honest_split: None,
            },
        ];
        let forest = Forest::from_parts(1, vec![1.0, 2.0], trees, ForestConfig::default());
        assert_eq!(forest.weights(&[0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn median_of_five_uniform_points() {
        let forest = root_only_forest(vec![1.0, 2.0, 3.0, 4.0, 5.0], 1);
        // cumulative weight reaches 0.5 at the third order statistic
        assert_eq!(forest.predict_quantile(&[2.0], 0.5), 3.0);
        assert_eq!(forest.predict_quantile(&[2.0], 0.999), 5.0);
    }

    #[test]
    fn root_only_tree_matches_empirical_quantile() {
        use rand::Rng;
        let mut rng = StreamId::root(99).label("oracle").rng();
        for trial in 0..50 {
            let n = rng.gen_range(1..40);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let alpha: f64 = rng.gen_range(0.01..0.99);
            let forest = root_only_forest(y.clone(), 1);
            assert_eq!(
                forest.predict_quantile(&[0.0], alpha),
                empirical_quantile(&y, alpha),
                "trial {trial}, n {n}, alpha {alpha}"
            );
        }
    }

    #[test]
    fn cdf_limits_and_quantile_consistency() {
        let data = toy_dataset(200, 2, 5);
        let config = ForestConfig {
            n_trees: 30,
            ..ForestConfig::default()
        };
        let forest = Forest::fit(&data, &config).unwrap();
        let query = [0.5, -1.0];
        let min = data.losses().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = data.losses().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(forest.predict_cdf(&query, min - 1.0), 0.0);
        assert!((forest.predict_cdf(&query, max + 1.0) - 1.0).abs() < 1e-12);
        for alpha in [0.1, 0.5, 0.9, 0.99] {
            let q = forest.predict_quantile(&query, alpha);
            assert!(forest.predict_cdf(&query, q) >= alpha - 1e-12);
        }
    }

    #[test]
    fn weights_nonnegative_and_normalized() {
        let data = toy_dataset(150, 3, 8);
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                n_trees: 25,
                honest: true,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        for q in [[0.0, 0.0, 0.0], [4.0, -4.0, 2.0], [-5.0, 5.0, -5.0]] {
            let w = forest.weights(&q);
            assert!(w.iter().all(|&wi| wi >= 0.0));
            let total: f64 = w.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {total}");
        }
    }

    #[test]
    fn quantiles_monotone_in_level() {
        let data = toy_dataset(300, 2, 13);
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                n_trees: 40,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        let query = [1.0, 0.0];
        let mut prev = f64::NEG_INFINITY;
        for i in 1..20 {
            let q = forest.predict_quantile(&query, i as f64 / 20.0);
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn batch_quantiles_match_single_level_calls() {
        let data = toy_dataset(120, 2, 21);
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                n_trees: 20,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        let query = [0.2, 0.4];
        let alphas = [0.95, 0.5, 0.99, 0.9];
        let batch = forest.predict_quantiles(&query, &alphas);
        for (i, &alpha) in alphas.iter().enumerate() {
            assert_eq!(batch[i], forest.predict_quantile(&query, alpha));
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let data = toy_dataset(100, 2, 3);
        let config = ForestConfig {
            n_trees: 15,
            seed: 42,
            ..ForestConfig::default()
        };
        let a = Forest::fit(&data, &config).unwrap();
        let b = Forest::fit(&data, &config).unwrap();
        let query = [0.1, 0.1];
        assert_eq!(
            a.predict_quantile(&query, 0.9).to_bits(),
            b.predict_quantile(&query, 0.9).to_bits()
        );
        assert_eq!(a.trees(), b.trees());
    }

    #[test]
    fn honest_members_disjoint_from_structure() {
        let data = toy_dataset(200, 2, 17);
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                n_trees: 10,
                honest: true,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        for tree in forest.trees() {
            let (structure, estimation) = tree.honest_split.as_ref().unwrap();
            let s: std::collections::HashSet<u32> = structure.iter().copied().collect();
            let e: std::collections::HashSet<u32> = estimation.iter().copied().collect();
            assert!(s.is_disjoint(&e));
            tree.root.for_each_leaf(&mut |members| {
                assert!(members.iter().all(|m| e.contains(m)));
            });
        }
    }
}
