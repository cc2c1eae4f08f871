//! Sparse positive similarity embeddings (SPoSE).
//!
//! Each stimulus gets a non-negative vector `x_i`. The probability that the
//! pair `(a, b)` of a triplet `(i, j, k)` is judged most similar is a softmax
//! over the three pairwise inner products. Training minimizes the mean
//! negative log-likelihood of the observed similar pairs plus an L1 penalty
//! and projects onto the non-negative orthant after every step.
//!
//! Objective convention (recorded in checkpoint metadata):
//! `loss = -mean_b log P(pair_b) + lambda * mean_{i in U} |x_i|_1`, where `U`
//! is the set of distinct stimuli appearing in the batch.

mod checkpoint;
mod eval;
mod train;

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StimulusId;
use crate::error::{Error, Result};
use crate::triplets::{Observation, TripletTrial};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use eval::{
    dimensionality_scan, heldout_accuracy, noise_ceiling, predicted_odd, reproducibility,
    ReproducibilityReport,
};
pub use train::{train, train_with, Checkpoint, EpochStats, L1Mode, Optimizer, TrainConfig, TrainOutcome};

pub const OBJECTIVE_CONVENTION: &str = "mean_batch_nll + lambda * mean_l1_of_distinct_batch_rows";

/// Training provenance stored alongside the learned values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EmbeddingMeta {
    pub lambda: f64,
    pub lr: f64,
    pub seed: u64,
    pub epoch: usize,
    pub objective: String,
}

/// An N×D non-negative embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Array2<f64>,
    pub meta: EmbeddingMeta,
}

impl Embedding {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        Self::with_meta(values, EmbeddingMeta::default())
    }

    pub fn with_meta(values: Array2<f64>, meta: EmbeddingMeta) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "embedding entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { values, meta })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_stimuli(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, id: StimulusId) -> ArrayView1<'_, f64> {
        self.values.row(id.0)
    }

    pub fn dot(&self, a: StimulusId, b: StimulusId) -> f64 {
        self.row(a).dot(&self.row(b))
    }

    /// Reorders columns by descending column sum (stable for equal sums).
    pub fn sort_columns_by_mass(&mut self) {
        let sums = self.values.sum_axis(Axis(0));
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]));
        self.values = self.values.select(Axis(1), &order);
    }

    pub(crate) fn check_index(&self, ids: &[StimulusId]) -> Result<()> {
        match ids.iter().find(|s| s.0 >= self.n_stimuli()) {
            Some(s) => Err(Error::InvalidArgument(format!(
                "stimulus {s} outside embedding of {} rows",
                self.n_stimuli()
            ))),
            None => Ok(()),
        }
    }
}

/// Train/held-out partition of trial ids by a seeded hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { heldout_fraction: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn is_heldout(&self, trial_id: u64) -> bool {
        // splitmix64 finalizer
        let mut z = trial_id ^ self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        ((z >> 11) as f64 / (1u64 << 53) as f64) < self.heldout_fraction
    }

    /// Splits observations into (train, held-out); disjoint and exhaustive.
    pub fn split(&self, obs: &[Observation]) -> (Vec<Observation>, Vec<Observation>) {
        obs.iter().partition(|o| !self.is_heldout(o.trial_id))
    }
}

/// Three dot products and the softmax over them, pair order
/// `(m0,m1), (m0,m2), (m1,m2)`.
fn pair_softmax(values: &Array2<f64>, m: [StimulusId; 3]) -> ([f64; 3], [f64; 3]) {
    let r = |s: StimulusId| values.row(s.0);
    let dots = [r(m[0]).dot(&r(m[1])), r(m[0]).dot(&r(m[2])), r(m[1]).dot(&r(m[2]))];
    let mx = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = dots.map(|d| (d - mx).exp());
    let z: f64 = e.iter().sum();
    (dots, e.map(|v| v / z))
}

fn pair_slot(m: [StimulusId; 3], a: StimulusId, b: StimulusId) -> Option<usize> {
    let has = |x: StimulusId, y: StimulusId| (a == x && b == y) || (a == y && b == x);
    if a == b {
        None
    } else if has(m[0], m[1]) {
        Some(0)
    } else if has(m[0], m[2]) {
        Some(1)
    } else if has(m[1], m[2]) {
        Some(2)
    } else {
        None
    }
}

/// Probability that `pair` is chosen as the most similar pair of `trial`.
pub fn triplet_probability(
    e: &Embedding,
    trial: &TripletTrial,
    pair: (StimulusId, StimulusId),
) -> Result<f64> {
    let m = trial.members();
    e.check_index(&m)?;
    let slot = pair_slot(m, pair.0, pair.1).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "pair ({}, {}) is not within trial {}",
            pair.0, pair.1, trial.trial_id
        ))
    })?;
    Ok(pair_softmax(&e.values, m).1[slot])
}

/// Accumulates NLL gradient for a slice of observations (unscaled sums).
fn nll_chunk(values: &Array2<f64>, obs: &[Observation], grad: &mut Array2<f64>) -> f64 {
    let mut nll = 0.0;
    for o in obs {
        let (i, j) = o.similar_pair();
        let k = o.odd;
        let m = [i, j, k];
        let (_, p) = pair_softmax(values, m);
        // p[0] = P(i,j), p[1] = P(i,k), p[2] = P(j,k)
        nll -= p[0].ln();
        let (xi, xj, xk) = (values.row(i.0), values.row(j.0), values.row(k.0));
        let gij = p[0] - 1.0;
        let (gik, gjk) = (p[1], p[2]);
        {
            let mut g = grad.row_mut(i.0);
            g.scaled_add(gij, &xj);
            g.scaled_add(gik, &xk);
        }
        {
            let mut g = grad.row_mut(j.0);
            g.scaled_add(gij, &xi);
            g.scaled_add(gjk, &xk);
        }
        {
            let mut g = grad.row_mut(k.0);
            g.scaled_add(gik, &xi);
            g.scaled_add(gjk, &xj);
        }
    }
    nll
}

/// Observations per parallel work unit; fixed so the reduction order does
/// not depend on the worker count.
pub(crate) const GRAD_CHUNK: usize = 256;

pub(crate) fn distinct_rows(batch: &[Observation]) -> Vec<usize> {
    let set: BTreeSet<usize> = batch.iter().flat_map(|o| o.members.map(|m| m.0)).collect();
    set.into_iter().collect()
}

/// Mean NLL over the batch and its gradient, without the L1 term.
pub(crate) fn nll_and_gradient(values: &Array2<f64>, batch: &[Observation]) -> (f64, Array2<f64>) {
    let shape = values.raw_dim();
    let partials: Vec<(f64, Array2<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = Array2::zeros(shape.clone());
            let nll = nll_chunk(values, chunk, &mut g);
            (nll, g)
        })
        .collect();
    let mut grad = Array2::zeros(shape);
    let mut nll = 0.0;
    for (l, g) in partials {
        nll += l;
        grad += &g;
    }
    let b = batch.len() as f64;
    grad.mapv_inplace(|v| v / b);
    (nll / b, grad)
}

/// Penalized objective and its (sub)gradient over a batch. The L1
/// subgradient is taken as 0 at 0.
pub fn loss_and_gradient(
    e: &Embedding,
    batch: &[Observation],
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for o in batch {
        e.check_index(&o.members)?;
    }
    let values = &e.values;
    let (nll, mut grad) = nll_and_gradient(values, batch);
    let rows = distinct_rows(batch);
    let scale = lambda / rows.len() as f64;
    let mut l1 = 0.0;
    for &r in &rows {
        for (g, &x) in grad.row_mut(r).iter_mut().zip(values.row(r)) {
            l1 += x.abs();
            if x != 0.0 {
                *g += scale * x.signum();
            }
        }
    }
    Ok((nll + scale * l1, grad))
}
