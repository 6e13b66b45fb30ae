use std::thread;

use super::dataset::{Dataset, Features};
use super::tree::{train_tree_weighted, DecisionTree};
use super::{ForestError, Prediction, TrainParams};
use crate::features::N_FEATURES;
use crate::model::ClassLabel;
use crate::rng::SplitMix64;

/// Bagged CART ensemble with soft voting.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    /// Training seed. Not part of the envelope; 0 after decoding.
    pub seed: u64,
}

impl RandomForest {
    pub fn from_trees(trees: Vec<DecisionTree>, seed: u64) -> Self {
        assert!(!trees.is_empty(), "a forest has at least one tree");
        Self { trees, seed }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Sums each tree's leaf class distribution; the largest mass wins (lowest
    /// label on ties) and the confidence is that mass over the tree count.
    pub fn predict(&self, x: &Features) -> Prediction {
        let mut mass = [0.0f64; ClassLabel::COUNT];
        for t in &self.trees {
            let c = t.leaf_counts(x);
            let total: f64 = c.iter().map(|&v| f64::from(v)).sum();
            if total > 0.0 {
                for k in 0..ClassLabel::COUNT {
                    mass[k] += f64::from(c[k]) / total;
                }
            }
        }
        let mut best = 0;
        for k in 1..ClassLabel::COUNT {
            if mass[k] > mass[best] {
                best = k;
            }
        }
        Prediction {
            label: ClassLabel::from_index(best).expect("three classes"),
            confidence: mass[best] / self.trees.len() as f64,
        }
    }
}

/// Bootstrap multiplicities: `n = effective_len` draws with replacement over
/// the weight-expanded rows, folded back to per-row counts.
fn bootstrap_weights(data: &Dataset, rng: &mut SplitMix64) -> Vec<u32> {
    let mut prefix = Vec::with_capacity(data.len());
    let mut acc = 0u64;
    for &w in data.weights() {
        acc += u64::from(w);
        prefix.push(acc);
    }
    let mut counts = vec![0u32; data.len()];
    for _ in 0..acc {
        let r = rng.below(acc);
        let row = prefix.partition_point(|&p| p <= r);
        counts[row] += 1;
    }
    counts
}

fn train_one(data: &Dataset, params: &TrainParams, t: usize) -> Result<DecisionTree, ForestError> {
    let mut rng = SplitMix64::derive(params.seed, t as u64);
    if params.bootstrap {
        let w = bootstrap_weights(data, &mut rng);
        train_tree_weighted(data, &w, params, &mut rng)
    } else {
        train_tree_weighted(data, data.weights(), params, &mut rng)
    }
}

/// Trains `n_trees` trees, tree `t` with `SplitMix64::derive(seed, t)`.
/// Trees are grown on scoped worker threads; the result equals sequential
/// training because each tree depends only on its own sub-seed.
pub fn train_forest(data: &Dataset, params: &TrainParams) -> Result<RandomForest, ForestError> {
    params.validate()?;
    if data.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams("n_trees must be >= 1".into()));
    }
    let workers = thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(params.n_trees);
    let mut slots: Vec<Option<Result<DecisionTree, ForestError>>> = (0..params.n_trees).map(|_| None).collect();
    thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(params.n_trees.div_ceil(workers)).enumerate() {
            let base = w * params.n_trees.div_ceil(workers);
            s.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(train_one(data, params, base + j));
                }
            });
        }
    });
    let trees = slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RandomForest::from_trees(trees, params.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Tree,
    Forest,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Tree => "dt",
            ModelKind::Forest => "rf",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ForestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dt" | "tree" => Ok(ModelKind::Tree),
            "rf" | "forest" => Ok(ModelKind::Forest),
            other => Err(ForestError::InvalidParams(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tree(DecisionTree),
    Forest(RandomForest),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tree(_) => ModelKind::Tree,
            Model::Forest(_) => ModelKind::Forest,
        }
    }

    pub fn predict_features(&self, x: &Features) -> Prediction {
        match self {
            Model::Tree(t) => t.predict(x),
            Model::Forest(f) => f.predict(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        let x: &Features = x.try_into().map_err(|_| ForestError::DimensionMismatch {
            expected: N_FEATURES,
            got: x.len(),
        })?;
        Ok(self.predict_features(x))
    }
}

impl From<DecisionTree> for Model {
    fn from(t: DecisionTree) -> Self {
        Model::Tree(t)
    }
}

impl From<RandomForest> for Model {
    fn from(f: RandomForest) -> Self {
        Model::Forest(f)
    }
}

/// Trains a model of the requested kind. A tree uses
/// `SplitMix64::derive(seed, 0)` and the dataset's own weights.
pub fn train_model(kind: ModelKind, data: &Dataset, params: &TrainParams) -> Result<Model, ForestError> {
    match kind {
        ModelKind::Tree => {
            let mut rng = SplitMix64::derive(params.seed, 0);
            Ok(Model::Tree(super::tree::train_tree(data, params, &mut rng)?))
        }
        ModelKind::Forest => Ok(Model::Forest(train_forest(data, params)?)),
    }
}

/// `confusion[truth][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix(pub [[u64; ClassLabel::COUNT]; ClassLabel::COUNT]);

impl ConfusionMatrix {
    pub fn record(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..ClassLabel::COUNT).map(|i| self.0[i][i]).sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.correct() as f64 / t as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Unweighted accuracy and confusion over labeled rows.
pub fn evaluate<'a>(
    model: &Model,
    rows: impl IntoIterator<Item = (&'a Features, ClassLabel)>,
) -> Result<Evaluation, ForestError> {
    let mut confusion = ConfusionMatrix::default();
    for (x, y) in rows {
        confusion.record(y, model.predict_features(x).label);
    }
    if confusion.total() == 0 {
        return Err(ForestError::EmptyDataset);
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
    })
}
