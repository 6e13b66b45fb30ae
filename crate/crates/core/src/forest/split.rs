//! Gini split search.
//!
//! Split quality is compared exactly. For a node with weighted class counts
//! `c` and size `n`, `n * gini = n - S/n` where `S = sum(c_k^2)`, so the
//! split minimizing weighted child impurity is the one maximizing
//! `S_left/n_left + S_right/n_right`. Those fractions are compared by
//! cross-multiplication in `u128`, which makes tie-breaking independent of
//! floating-point rounding.

use std::cmp::Ordering;

use super::dataset::{Dataset, Features};
use crate::model::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    /// Parent Gini minus the size-weighted mean of the children's Gini.
    pub impurity_decrease: f64,
}

type Counts = [u64; ClassLabel::COUNT];

fn sum_sq(c: &Counts) -> u128 {
    c.iter().map(|&v| u128::from(v) * u128::from(v)).sum()
}

/// `S_l/n_l + S_r/n_r` as an unreduced fraction.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn of(left: &Counts, n_left: u64, right: &Counts, n_right: u64) -> Self {
        let (nl, nr) = (u128::from(n_left), u128::from(n_right));
        Score {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi` so
/// that `lo <= t < hi` holds after rounding.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

/// Best split of the rows listed in `idx` over `candidates` (feature
/// indices, any order). Ties go to the lowest feature index, then the lowest
/// threshold. `None` when no split strictly lowers impurity, unless
/// `allow_zero_gain` is set, in which case any valid split is returned.
pub(crate) fn best_split_rows(
    x: &[Features],
    y: &[ClassLabel],
    w: &[u32],
    idx: &[usize],
    candidates: &[usize],
    allow_zero_gain: bool,
) -> Option<Split> {
    if idx.len() < 2 {
        return None;
    }
    let mut total: Counts = [0; ClassLabel::COUNT];
    for &i in idx {
        total[y[i].index()] += u64::from(w[i]);
    }
    let n: u64 = total.iter().sum();
    let parent_sq = sum_sq(&total);

    let mut feats = candidates.to_vec();
    feats.sort_unstable();
    feats.dedup();

    let mut order = idx.to_vec();
    let mut best: Option<(Score, usize, f64)> = None;
    for &f in &feats {
        order.sort_unstable_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left: Counts = [0; ClassLabel::COUNT];
        let mut n_left = 0u64;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left[y[i].index()] += u64::from(w[i]);
            n_left += u64::from(w[i]);
            let (lo, hi) = (x[i][f], x[order[k + 1]][f]);
            if lo >= hi {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
            let score = Score::of(&left, n_left, &right, n - n_left);
            let better = match &best {
                None => true,
                Some((b, _, _)) => score.cmp(b) == Ordering::Greater,
            };
            if better {
                best = Some((score, f, midpoint(lo, hi)));
            }
        }
    }

    let (score, feature, threshold) = best?;
    // strict improvement over the parent: score > S/n
    if !allow_zero_gain && score.num * u128::from(n) <= parent_sq * score.den {
        return None;
    }
    let nf = n as f64;
    let parent = parent_sq as f64 / nf;
    Some(Split {
        feature,
        threshold,
        impurity_decrease: (score.value() - parent) / nf,
    })
}

/// Best Gini split of a whole dataset over `candidate_features`.
pub fn best_split(data: &Dataset, candidate_features: &[usize]) -> Option<Split> {
    let idx: Vec<usize> = (0..data.len()).collect();
    best_split_rows(data.features(), data.labels(), data.weights(), &idx, candidate_features, false)
}
