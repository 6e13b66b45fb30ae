use super::dataset::{Dataset, Features};
use super::split::best_split_rows;
use super::{ForestError, Prediction, TrainParams};
use crate::features::N_FEATURES;
use crate::model::ClassLabel;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Go to `left` iff `x[feature] <= threshold`.
    Internal {
        feature: u8,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: [u32; ClassLabel::COUNT],
    },
}

/// CART tree stored as a node array in pre-order: the root is node 0 and
/// every child index is greater than its parent's.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

pub(crate) fn leaf_prediction(counts: &[u32; ClassLabel::COUNT]) -> Prediction {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    // first maximum wins, i.e. the lowest label on ties
    let (best, &max) = counts
        .iter()
        .enumerate()
        .fold((0, &counts[0]), |acc, (i, c)| if *c > *acc.1 { (i, c) } else { acc });
    Prediction {
        label: ClassLabel::from_index(best).expect("three classes"),
        confidence: if total == 0 { 0.0 } else { f64::from(max) / total as f64 },
    }
}

impl DecisionTree {
    /// Builds a tree from raw nodes without structural checks; use
    /// [`deserialize_model`](super::deserialize_model) for untrusted input.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Self {
        assert!(!nodes.is_empty(), "a tree has at least one node");
        Self { nodes }
    }

    pub fn single_leaf(counts: [u32; ClassLabel::COUNT]) -> Self {
        Self::from_nodes(vec![TreeNode::Leaf { counts }])
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        N_FEATURES
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_counts(&self, x: &Features) -> &[u32; ClassLabel::COUNT] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { counts } => return counts,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn predict(&self, x: &Features) -> Prediction {
        leaf_prediction(self.leaf_counts(x))
    }
}

struct Grower<'a> {
    x: &'a [Features],
    y: &'a [ClassLabel],
    w: &'a [u32],
    params: &'a TrainParams,
    rng: &'a mut SplitMix64,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let mut counts = [0u32; ClassLabel::COUNT];
        for &i in &idx {
            counts[self.y[i].index()] += self.w[i];
        }
        let n: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode::Leaf { counts });

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || n < self.params.min_samples_split {
            return id;
        }
        let candidates: Vec<usize> = if self.params.features_per_split >= N_FEATURES {
            (0..N_FEATURES).collect()
        } else {
            self.rng.choose_sorted(N_FEATURES, self.params.features_per_split)
        };
        // Impure nodes also take zero-gain splits; otherwise patterns such as
        // XOR, where no single cut lowers Gini, could never be learned.
        let Some(split) = best_split_rows(self.x, self.y, self.w, &idx, &candidates, true) else {
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[id as usize] = TreeNode::Internal {
            feature: split.feature as u8,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a tree on rows with the given weights (rows of weight 0 are left
/// out). A node stays a leaf when it is pure, at `max_depth`, below
/// `min_samples_split`, or when no candidate feature has two distinct
/// values. Feature candidates for each node are drawn from `rng` in
/// pre-order whenever `features_per_split < 8`.
pub(crate) fn train_tree_weighted(
    data: &Dataset,
    weights: &[u32],
    params: &TrainParams,
    rng: &mut SplitMix64,
) -> Result<DecisionTree, ForestError> {
    params.validate()?;
    let idx: Vec<usize> = (0..data.len()).filter(|&i| weights[i] > 0).collect();
    if idx.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    let mut g = Grower {
        x: data.features(),
        y: data.labels(),
        w: weights,
        params,
        rng,
        nodes: Vec::new(),
    };
    g.grow(idx, 0);
    Ok(DecisionTree { nodes: g.nodes })
}

/// Recursive CART on the dataset's own weights.
pub fn train_tree(data: &Dataset, params: &TrainParams, rng: &mut SplitMix64) -> Result<DecisionTree, ForestError> {
    train_tree_weighted(data, data.weights(), params, rng)
}
