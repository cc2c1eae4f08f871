//! Leave-one-out nearest-centroid classification of embeddings.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{RatingKind, RatingMatrix};
use crate::error::{Error, Result};
use crate::stats::{mean, quantile};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CentroidConfig {
    /// Largest k for top-k accuracy.
    pub k: usize,
    /// Categories with fewer members are dropped together with their stimuli.
    pub min_members: usize,
    /// Z-score embedding columns before computing distances.
    pub standardize: bool,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for CentroidConfig {
    fn default() -> Self {
        Self { k: 3, min_members: 10, standardize: false, permutations: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CentroidReport {
    /// `topk[j]` is the top-(j+1) accuracy.
    pub topk: Vec<f64>,
    /// Categories kept after the size filter (original label values).
    pub categories: Vec<usize>,
    pub n_classified: usize,
    /// Top-k accuracy for each label shuffle.
    pub null: Vec<f64>,
    pub null_mean: f64,
    pub null_band: (f64, f64),
    /// Chance level when the ranking of categories is independent of the label.
    pub chance: f64,
}

impl CentroidReport {
    pub fn accuracy(&self) -> f64 {
        *self.topk.last().unwrap()
    }
}

/// Expected top-k accuracy of a classifier whose category ranking carries no
/// information about the true label.
pub fn analytic_chance(n_categories: usize, k: usize) -> f64 {
    (k.min(n_categories)) as f64 / n_categories as f64
}

/// Rank of the true category among all centroids for every item.
fn true_ranks(x: ArrayView2<f64>, labels: &[usize], n_cat: usize) -> Vec<usize> {
    let d = x.ncols();
    let mut sums = Array2::<f64>::zeros((n_cat, d));
    let mut counts = vec![0usize; n_cat];
    for (row, &c) in x.outer_iter().zip(labels) {
        let mut s = sums.row_mut(c);
        s += &row;
        counts[c] += 1;
    }
    let mut centroids = sums.clone();
    for (mut c, &n) in centroids.outer_iter_mut().zip(&counts) {
        c /= n as f64;
    }
    x.outer_iter()
        .zip(labels)
        .map(|(row, &own)| {
            let dist = |c: usize| -> f64 {
                if c == own {
                    let n = (counts[c] - 1) as f64;
                    row.iter().zip(sums.row(c)).map(|(v, s)| (v - (s - v) / n).powi(2)).sum()
                } else {
                    row.iter().zip(centroids.row(c)).map(|(v, m)| (v - m).powi(2)).sum()
                }
            };
            let d_own = dist(own);
            (0..n_cat)
                .filter(|&c| c != own)
                .filter(|&c| {
                    let dc = dist(c);
                    dc < d_own || (dc == d_own && c < own)
                })
                .count()
        })
        .collect()
}

fn topk_from_ranks(ranks: &[usize], k: usize) -> Vec<f64> {
    let n = ranks.len() as f64;
    (1..=k).map(|j| ranks.iter().filter(|&&r| r < j).count() as f64 / n).collect()
}

fn standardized(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut col in out.columns_mut() {
        let m = col.mean().unwrap_or(0.0);
        let sd = col.std(1.0);
        col.mapv_inplace(|v| if sd > 0.0 { (v - m) / sd } else { v - m });
    }
    out
}

/// Leave-one-out nearest-centroid classification with a label-shuffle null.
///
/// `labels[i]` is the category of row `i` of `x`. The held-out item is
/// removed from its own category's centroid; distances are Euclidean.
pub fn nearest_centroid(x: ArrayView2<f64>, labels: &[usize], cfg: &CentroidConfig) -> Result<CentroidReport> {
    if labels.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n_labels = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    let categories: Vec<usize> =
        (0..n_labels).filter(|&c| sizes[c] >= cfg.min_members.max(2)).collect();
    if categories.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two categories with {} or more members",
            cfg.min_members.max(2)
        )));
    }
    if cfg.k > categories.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds the {} eligible categories",
            cfg.k,
            categories.len()
        )));
    }
    let mut dense = vec![usize::MAX; n_labels];
    for (i, &c) in categories.iter().enumerate() {
        dense[c] = i;
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| dense[labels[i]] != usize::MAX).collect();
    let y: Vec<usize> = keep.iter().map(|&i| dense[labels[i]]).collect();
    let mut xs = x.select(Axis(0), &keep);
    if cfg.standardize {
        xs = standardized(xs.view());
    }
    let n_cat = categories.len();
    let topk = topk_from_ranks(&true_ranks(xs.view(), &y, n_cat), cfg.k);

    let null: Vec<f64> = (0..cfg.permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
            let mut shuffled = y.clone();
            shuffled.shuffle(&mut rng);
            let ranks = true_ranks(xs.view(), &shuffled, n_cat);
            ranks.iter().filter(|&&rk| rk < cfg.k).count() as f64 / ranks.len() as f64
        })
        .collect();
    let (null_mean, null_band) = if null.is_empty() {
        (f64::NAN, (f64::NAN, f64::NAN))
    } else {
        (mean(&null), (quantile(&null, 0.025), quantile(&null, 0.975)))
    };
    Ok(CentroidReport {
        topk,
        categories,
        n_classified: keep.len(),
        null,
        null_mean,
        null_band,
        chance: analytic_chance(n_cat, cfg.k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DominantCategory {
    pub category: usize,
    /// Another category shares the maximum rating.
    pub tied: bool,
}

/// Highest-rated category per stimulus; ties go to the lowest index.
pub fn dominant_category(cats: &RatingMatrix) -> Result<Vec<DominantCategory>> {
    if cats.kind() != RatingKind::Category {
        return Err(Error::InvalidArgument("dominant category needs category ratings".into()));
    }
    Ok(cats
        .values()
        .outer_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let category = row.iter().position(|&v| v == max).unwrap();
            let tied = row.iter().filter(|&&v| v == max).count() > 1;
            DominantCategory { category, tied }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn clusters(per: usize) -> (Array2<f64>, Vec<usize>) {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut x = Array2::zeros((3 * per, 2));
        let mut y = Vec::new();
        for c in 0..3 {
            for j in 0..per {
                let i = c * per + j;
                x[[i, 0]] = centers[c][0] + (j as f64 * 0.37).sin();
                x[[i, 1]] = centers[c][1] + (j as f64 * 0.91).cos();
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separated_clusters_are_perfect() {
        let (x, y) = clusters(12);
        let cfg = CentroidConfig { k: 3, permutations: 50, ..Default::default() };
        let r = nearest_centroid(x.view(), &y, &cfg).unwrap();
        assert_eq!(r.topk, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.chance, 1.0);
        let top1 = nearest_centroid(x.view(), &y, &CentroidConfig { k: 1, ..cfg }).unwrap();
        assert!(top1.null_mean < 0.6, "{}", top1.null_mean);
    }

    #[test]
    fn small_categories_dropped_and_k_checked() {
        let (mut x, mut y) = clusters(12);
        x.push_row(ndarray::aview1(&[5.0, 5.0])).unwrap();
        y.push(7);
        let cfg = CentroidConfig { k: 1, permutations: 0, ..Default::default() };
        let r = nearest_centroid(x.view(), &y, &cfg).unwrap();
        assert_eq!(r.categories, vec![0, 1, 2]);
        assert_eq!(r.n_classified, 36);
        let bad = CentroidConfig { k: 4, ..cfg };
        assert!(matches!(nearest_centroid(x.view(), &y, &bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn leave_one_out_matters() {
        // Two items per class: with the item itself in its centroid a point
        // halfway between classes would be misclassified differently.
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = vec![0, 0, 1, 1];
        let cfg = CentroidConfig { k: 1, min_members: 2, permutations: 0, ..Default::default() };
        let r = nearest_centroid(x.view(), &y, &cfg).unwrap();
        // item 1: own centroid 0.0 (dist 1), other 2.5 (dist 1.5) -> correct
        // item 2: own centroid 3.0 (dist 1), other 0.5 (dist 1.5) -> correct
        assert_eq!(r.topk, vec![1.0]);
    }

    #[test]
    fn dominant_ties_flagged() {
        let mut v = Array2::<f64>::zeros((2, 34));
        v[[0, 5]] = 0.9;
        v[[1, 2]] = 0.4;
        v[[1, 8]] = 0.4;
        let labels = (0..34).map(|i| format!("c{i}")).collect();
        let m = RatingMatrix::new(RatingKind::Category, v, labels).unwrap();
        let d = dominant_category(&m).unwrap();
        assert_eq!(d[0], DominantCategory { category: 5, tied: false });
        assert_eq!(d[1], DominantCategory { category: 2, tied: true });
    }
}
