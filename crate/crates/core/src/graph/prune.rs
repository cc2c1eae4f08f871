//! How many of its strongest components each stimulus needs.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spose::{heldout_accuracy, Embedding};
use crate::triplets::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunePoint {
    pub target: f64,
    /// Components kept per stimulus (before capping at each row's support).
    pub k: usize,
    /// Mean over stimuli of `min(k, nonzero weights in the row)`.
    pub mean_k: f64,
    pub reachable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningCurve {
    pub full_accuracy: f64,
    /// Held-out accuracy when each stimulus keeps its top `k` components,
    /// for `k = 1..=D`.
    pub accuracy_by_k: Vec<f64>,
    pub points: Vec<PrunePoint>,
}

impl PruningCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Schema(e.to_string());
        w.write_record(["target", "mean_k"]).map_err(err)?;
        for p in &self.points {
            w.write_record([p.target.to_string(), p.mean_k.to_string()]).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Zero all but the `k` largest weights of every row; equal weights favor
/// the lower column.
pub fn keep_top_k(e: &Embedding, k: usize) -> Result<Embedding> {
    let v = e.values();
    let mut out = Array2::zeros(v.raw_dim());
    for (row, mut dst) in v.outer_iter().zip(out.outer_iter_mut()) {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in idx.iter().take(k) {
            dst[j] = row[j];
        }
    }
    Embedding::new(out)
}

/// For each target, the smallest per-stimulus budget `k` whose pruned
/// embedding keeps at least `target` times the full held-out accuracy.
/// A target that even `k = D` misses is reported at `D` and flagged.
pub fn prune_components(e: &Embedding, heldout: &[Observation], targets: &[f64]) -> Result<PruningCurve> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("pruning needs held-out judgments".into()));
    }
    let full_accuracy = heldout_accuracy(e, heldout)?;
    let d = e.dim();
    let accuracy_by_k: Vec<f64> = (1..=d)
        .into_par_iter()
        .map(|k| heldout_accuracy(&keep_top_k(e, k)?, heldout))
        .collect::<Result<_>>()?;
    let support: Vec<usize> =
        e.values().outer_iter().map(|r| r.iter().filter(|&&v| v > 0.0).count()).collect();
    let points = targets
        .iter()
        .map(|&target| {
            let need = target * full_accuracy;
            let found = accuracy_by_k.iter().position(|&a| a >= need);
            let k = found.map_or(d, |i| i + 1);
            let mean_k = support.iter().map(|&s| k.min(s) as f64).sum::<f64>() / support.len() as f64;
            PrunePoint { target, k, mean_k, reachable: found.is_some() }
        })
        .collect();
    Ok(PruningCurve { full_accuracy, accuracy_by_k, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StimulusId;
    use crate::triplets::TripletTrial;

    #[test]
    fn top_k_ties_prefer_lower_column() {
        let e = Embedding::new(ndarray::array![[0.5, 0.5, 0.1], [0.0, 0.2, 0.9]]).unwrap();
        let p = keep_top_k(&e, 1).unwrap();
        assert_eq!(p.values(), &ndarray::array![[0.5, 0.0, 0.0], [0.0, 0.0, 0.9]]);
    }

    #[test]
    fn one_hot_needs_one() {
        let n = 12;
        let v = Array2::from_shape_fn((n, 4), |(i, j)| if i % 4 == j { 1.0 + i as f64 * 0.01 } else { 0.0 });
        let e = Embedding::new(v).unwrap();
        let mut obs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let t = TripletTrial::new(obs.len() as u64, [a, b, c].map(StimulusId)).unwrap();
                    let odd = crate::spose::predicted_odd(&e, t.members());
                    obs.push(Observation::new(&t, odd).unwrap());
                }
            }
        }
        let c = prune_components(&e, &obs, &[0.95, 0.99]).unwrap();
        assert_eq!(c.full_accuracy, 1.0);
        assert!(c.points.iter().all(|p| p.k == 1 && p.mean_k == 1.0 && p.reachable));
    }
}
