//! Randomized CART regression trees.
//!
//! Splits maximize variance reduction over `mtry` uniformly sampled
//! candidate features (so every feature keeps selection probability
//! mtry/d > 0), with thresholds at midpoints of consecutive distinct sorted
//! values. Both children must keep at least `min_child_fraction` of the
//! parent's samples and at least `min_node_size` samples. Ties between
//! equal-gain splits resolve to the lowest feature index, then the lowest
//! threshold, so construction is deterministic given the tree's RNG stream.
//!
//! In honest mode the tree sample is partitioned by original index into a
//! structure half that decides the splits and an estimation half that alone
//! populates the leaves.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::market::OfflineDataset;
use crate::qrf::{ForestConfig, TreeParams};
use crate::rng::StreamId;

/// A fitted tree node. Leaves hold original training indices (with
/// bootstrap multiplicity); in honest mode these come from the estimation
/// half only.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        members: Vec<u32>,
    },
}

impl TreeNode {
    /// Route a query to its leaf's member list.
    pub fn leaf_members(&self, query: &[f64]) -> &[u32] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { members } => return members,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if query[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn for_each_leaf(&self, visit: &mut impl FnMut(&[u32])) {
        match self {
            TreeNode::Leaf { members } => visit(members),
            TreeNode::Internal { left, right, .. } => {
                left.for_each_leaf(visit);
                right.for_each_leaf(visit);
            }
        }
    }
}

/// A tree plus, in honest mode, the distinct original indices assigned to
/// each role.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTree {
    pub root: TreeNode,
    /// (structure indices, estimation indices), recorded only when honest.
    pub honest_split: Option<(Vec<u32>, Vec<u32>)>,
}

/// Per-training-point weights assigned by one tree at a query: 1/k for each
/// of the k leaf members (with multiplicity), 0 elsewhere. Sums to one.
pub fn tree_weights(tree: &TreeNode, query: &[f64], n: usize) -> Vec<f64> {
    let mut weights = vec![0.0; n];
    let members = tree.leaf_members(query);
    let share = 1.0 / members.len() as f64;
    for &idx in members {
        weights[idx as usize] += share;
    }
    weights
}

/// Fit a single tree on a dataset; `tree_index` selects the tree's random
/// sub-stream of `config.seed`.
pub fn fit_tree(dataset: &OfflineDataset, config: &ForestConfig, tree_index: usize) -> Result<FittedTree> {
    if dataset.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let params = config.resolve(dataset.n(), dataset.dim())?;
    let mut rng = StreamId::root(config.seed)
        .label("tree")
        .index(tree_index as u64)
        .rng();
    Ok(fit_tree_with(
        dataset.features(),
        dataset.dim(),
        dataset.losses(),
        &params,
        &mut rng,
    ))
}

pub(crate) fn fit_tree_with(
    x: &[f64],
    d: usize,
    y: &[f64],
    params: &TreeParams,
    rng: &mut ChaCha12Rng,
) -> FittedTree {
    let n = y.len();
    let sample: Vec<u32> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
    } else {
        (0..n as u32).collect()
    };

    let mut builder = TreeBuilder {
        x,
        d,
        y,
        params,
        rng,
        feature_pool: (0..d).collect(),
    };

    if params.honest {
        let mut distinct = sample.clone();
        distinct.sort_unstable();
        distinct.dedup();
        // Fisher-Yates over distinct original indices; first half decides
        // structure, the rest populate leaves. Disjoint by construction.
        for i in (1..distinct.len()).rev() {
            let j = builder.rng.gen_range(0..=i);
            distinct.swap(i, j);
        }
        let cut = distinct.len() / 2;
        let structure_ids: Vec<u32> = distinct[..cut].to_vec();
        let estimation_ids: Vec<u32> = distinct[cut..].to_vec();
        let mut is_structure = vec![false; n];
        for &i in &structure_ids {
            is_structure[i as usize] = true;
        }
        let mut structure = Vec::new();
        let mut estimation = Vec::new();
        for &i in &sample {
            if is_structure[i as usize] {
                structure.push(i);
            } else {
                estimation.push(i);
            }
        }
        let root = builder.build(structure, Some(estimation));
        FittedTree {
            root,
            honest_split: Some((structure_ids, estimation_ids)),
        }
    } else {
        let root = builder.build(sample, None);
        FittedTree {
            root,
            honest_split: None,
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a [f64],
    d: usize,
    y: &'a [f64],
    params: &'a TreeParams,
    rng: &'a mut ChaCha12Rng,
    feature_pool: Vec<usize>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    #[inline]
    fn value(&self, idx: u32, feature: usize) -> f64 {
        self.x[idx as usize * self.d + feature]
    }

    /// Estimation-role indices live in `estimation` (honest mode); otherwise
    /// the structure sample doubles as the member list.
    fn build(&mut self, structure: Vec<u32>, estimation: Option<Vec<u32>>) -> TreeNode {
        let member_count = estimation.as_ref().map_or(structure.len(), Vec::len);
        let oversized = member_count > self.params.max_leaf_count;

        if structure.len() >= 2 {
            if let Some(split) = self.best_split(&structure, estimation.as_deref()) {
                if split.gain > 0.0 || oversized {
                    let (s_left, s_right) = self.partition(&structure, &split);
                    let (e_left, e_right) = match &estimation {
                        Some(e) => {
                            let (l, r) = self.partition(e, &split);
                            (Some(l), Some(r))
                        }
                        None => (None, None),
                    };
                    let left = self.build(s_left, e_left);
                    let right = self.build(s_right, e_right);
                    return TreeNode::Internal {
                        feature: split.feature,
                        threshold: split.threshold,
                        left: Box::new(left),
                        right: Box::new(right),
                    };
                }
            }
        }
        TreeNode::Leaf {
            members: estimation.unwrap_or(structure),
        }
    }

    fn partition(&self, indices: &[u32], split: &Split) -> (Vec<u32>, Vec<u32>) {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &idx in indices {
            if self.value(idx, split.feature) <= split.threshold {
                left.push(idx);
            } else {
                right.push(idx);
            }
        }
        (left, right)
    }

    fn sample_features(&mut self) -> Vec<usize> {
        let mtry = self.params.mtry.min(self.d);
        for i in 0..mtry {
            let j = self.rng.gen_range(i..self.d);
            self.feature_pool.swap(i, j);
        }
        let mut picked = self.feature_pool[..mtry].to_vec();
        // ascending order fixes the tie-break: first strict improvement wins
        picked.sort_unstable();
        picked
    }

    fn best_split(&mut self, structure: &[u32], estimation: Option<&[u32]>) -> Option<Split> {
        let n_s = structure.len();
        let node_mean = structure.iter().map(|&i| self.y[i as usize]).sum::<f64>() / n_s as f64;
        let mut total_centered = 0.0;
        let mut sum_sq_centered = 0.0;
        for &i in structure {
            let c = self.y[i as usize] - node_mean;
            total_centered += c;
            sum_sq_centered += c * c;
        }
        // pure node: splitting cannot change any prediction
        let scale = 1e-12 * (1.0 + node_mean.abs());
        if sum_sq_centered / n_s as f64 <= scale * scale {
            return None;
        }

        let gamma = self.params.min_child_fraction;
        let gamma_min = ((gamma * n_s as f64) - 1e-9).ceil().max(1.0) as usize;
        let min_struct = self.params.min_node_size.max(gamma_min);
        let min_est = self.params.min_node_size;

        let candidates = self.sample_features();
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n_s);
        let mut est_vals: Vec<f64> = Vec::new();

        for feature in candidates {
            pairs.clear();
            pairs.extend(
                structure
                    .iter()
                    .map(|&i| (self.value(i, feature), self.y[i as usize] - node_mean)),
            );
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n_s - 1].0 {
                continue; // constant feature in this node
            }

            let (e_len, mut e_ptr) = match estimation {
                Some(e) => {
                    est_vals.clear();
                    est_vals.extend(e.iter().map(|&i| self.value(i, feature)));
                    est_vals.sort_unstable_by(f64::total_cmp);
                    (e.len(), 0usize)
                }
                None => (0, 0),
            };

            let mut left_sum = 0.0;
            for p in 0..n_s - 1 {
                left_sum += pairs[p].1;
                let left_n = p + 1;
                let right_n = n_s - left_n;
                if right_n < min_struct {
                    break;
                }
                if left_n < min_struct || pairs[p].0 == pairs[p + 1].0 {
                    continue;
                }
                let low = pairs[p].0;
                let high = pairs[p + 1].0;
                let mut threshold = low + 0.5 * (high - low);
                if threshold >= high {
                    // midpoint rounded up to the next value; keep the
                    // partition consistent with the prefix counts
                    threshold = low;
                }
                if estimation.is_some() {
                    while e_ptr < e_len && est_vals[e_ptr] <= threshold {
                        e_ptr += 1;
                    }
                    if e_ptr < min_est || e_len - e_ptr < min_est {
                        continue;
                    }
                }
                let right_sum = total_centered - left_sum;
                let gain = left_sum * left_sum / left_n as f64
                    + right_sum * right_sum / right_n as f64
                    - total_centered * total_centered / n_s as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}
