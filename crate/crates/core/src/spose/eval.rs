use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::{train, Embedding, TrainConfig};
use crate::corpus::StimulusId;
use crate::error::{Error, Result};
use crate::stats::{fisher_mean, pearson_view};
use crate::triplets::{Judgment, Observation};

/// Odd member predicted by the embedding: the member outside the pair with
/// the largest inner product. Exact ties go to the pair with the smallest
/// sorted stimulus ids.
pub fn predicted_odd(e: &Embedding, members: [StimulusId; 3]) -> StimulusId {
    let cand = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let mut best: Option<(f64, (StimulusId, StimulusId), usize)> = None;
    for (a, b, odd) in cand {
        let d = e.dot(members[a], members[b]);
        let key = (members[a].min(members[b]), members[a].max(members[b]));
        let better = match best {
            None => true,
            Some((bd, bk, _)) => d > bd || (d == bd && key < bk),
        };
        if better {
            best = Some((d, key, odd));
        }
    }
    members[best.unwrap().2]
}

/// Fraction of observations whose most probable pair matches the observed
/// similar pair.
pub fn heldout_accuracy(e: &Embedding, obs: &[Observation]) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    for o in obs {
        e.check_index(&o.members)?;
    }
    let hits: usize = obs
        .par_iter()
        .filter(|o| predicted_odd(e, o.members) == o.odd)
        .count();
    Ok(hits as f64 / obs.len() as f64)
}

/// Mean modal-choice share over trials judged repeatedly.
pub fn noise_ceiling(repeats: &[Judgment]) -> Result<f64> {
    let mut per_trial: BTreeMap<u64, HashMap<StimulusId, usize>> = BTreeMap::new();
    for j in repeats {
        *per_trial.entry(j.trial_id).or_default().entry(j.odd).or_default() += 1;
    }
    if per_trial.is_empty() {
        return Err(Error::InvalidArgument("no repeated judgments".into()));
    }
    let mut total = 0.0;
    for (trial, counts) in &per_trial {
        let n: usize = counts.values().sum();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("trial {trial} has fewer than 2 repetitions")));
        }
        total += *counts.values().max().unwrap() as f64 / n as f64;
    }
    Ok(total / per_trial.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproducibilityReport {
    /// `scores[run][dim]`; `None` where the dimension is constant.
    pub scores: Vec<Vec<Option<f64>>>,
}

impl ReproducibilityReport {
    /// Mean score per dimension index across runs (defined entries only).
    pub fn mean_by_dimension(&self) -> Vec<Option<f64>> {
        let d = self.scores.first().map_or(0, Vec::len);
        (0..d)
            .map(|k| {
                let v: Vec<f64> = self.scores.iter().filter_map(|r| r[k]).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }
}

/// For each dimension of each run: the best-matching dimension (maximum
/// Pearson r) in every other run, averaged in Fisher z space.
pub fn reproducibility(runs: &[Embedding]) -> Result<ReproducibilityReport> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument("at least two runs are required".into()));
    }
    let (n, d) = (runs[0].n_stimuli(), runs[0].dim());
    if runs.iter().any(|r| r.n_stimuli() != n || r.dim() != d) {
        return Err(Error::ShapeMismatch("runs differ in stimulus count or dimension".into()));
    }
    let scores = (0..runs.len())
        .into_par_iter()
        .map(|r| {
            (0..d)
                .map(|k| {
                    let col = runs[r].values().column(k);
                    let mut best_per_run = Vec::with_capacity(runs.len() - 1);
                    for (s, other) in runs.iter().enumerate() {
                        if s == r {
                            continue;
                        }
                        let best = (0..d)
                            .filter_map(|q| pearson_view(col, other.values().column(q)))
                            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                        if let Some(b) = best {
                            best_per_run.push(b);
                        }
                    }
                    if pearson_view(col, col).is_none() {
                        None
                    } else {
                        fisher_mean(&best_per_run)
                    }
                })
                .collect()
        })
        .collect();
    Ok(ReproducibilityReport { scores })
}

/// Trains one embedding per requested dimensionality and reports held-out
/// accuracy.
pub fn dimensionality_scan(
    n_stimuli: usize,
    train_set: &[Observation],
    heldout: &[Observation],
    dims: &[usize],
    template: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no dimensionalities given".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("dimension 0 is not a valid embedding size".into()));
    }
    dims.iter()
        .map(|&dim| {
            let cfg = TrainConfig { dim, ..template.clone() };
            let out = train(n_stimuli, train_set, Some(heldout), &cfg)?;
            Ok((dim, heldout_accuracy(&out.embedding, heldout)?))
        })
        .collect()
}
