//! Deterministic odd-one-out oracles.
//!
//! The rating oracle picks the pair with the highest cosine similarity as the
//! non-odd pair. The feature oracle picks the member with the greatest mean
//! cosine distance to the other two. Ties are never resolved silently: the
//! [`TieRule`] decides between the tied non-odd pairs.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Judgment, JudgmentSource, TripletTrial};
use crate::corpus::{read_id_table, write_id_table, RatingMatrix, StimulusId};
use crate::error::{Error, Result};

/// Scores closer than this are treated as tied.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum TieRule {
    /// The tied non-odd pair with the lexicographically smallest sorted
    /// stimulus-id pair wins.
    #[default]
    LowestIndexPair,
    /// A uniformly random tied pair, seeded per trial.
    SeededRandom { seed: u64 },
}

/// Slots (into the trial's members) for the three candidate pairs.
const PAIRS: [(usize, usize, usize); 3] = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];

fn sorted_pair(trial: &TripletTrial, a: usize, b: usize) -> (StimulusId, StimulusId) {
    let m = trial.members();
    (m[a].min(m[b]), m[a].max(m[b]))
}

/// Given a score per candidate pair (higher = more similar), returns the slot
/// of the odd member.
fn choose(trial: &TripletTrial, scores: [f64; 3], tie: TieRule) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<usize> = (0..3).filter(|&p| best - scores[p] <= TIE_EPS).collect();
    tied.sort_by_key(|&p| sorted_pair(trial, PAIRS[p].0, PAIRS[p].1));
    let pick = match tie {
        TieRule::LowestIndexPair => tied[0],
        TieRule::SeededRandom { seed } => {
            if tied.len() == 1 {
                tied[0]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial.trial_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                tied[rng.random_range(0..tied.len())]
            }
        }
    };
    PAIRS[pick].2
}

fn unit_rows(values: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = values.clone();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroRow { stimulus: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

fn check_members(trial: &TripletTrial, n: usize) -> Result<()> {
    if let Some(m) = trial.members().iter().find(|m| m.0 >= n) {
        return Err(Error::InvalidArgument(format!(
            "trial {} references stimulus {m} but only {n} are indexed",
            trial.trial_id
        )));
    }
    Ok(())
}

/// Rating oracle over pre-normalized rows; build once, judge many trials.
#[derive(Debug, Clone)]
pub struct CosineOracle {
    unit: Array2<f64>,
    tie: TieRule,
    source: JudgmentSource,
}

impl CosineOracle {
    pub fn from_ratings(m: &RatingMatrix, tie: TieRule) -> Result<Self> {
        Self::from_rows(m.values(), tie)
    }

    /// Any row-per-stimulus matrix, e.g. concatenated category and dimension
    /// ratings.
    pub fn from_rows(rows: &Array2<f64>, tie: TieRule) -> Result<Self> {
        Ok(Self { unit: unit_rows(rows)?, tie, source: JudgmentSource::RatingOracle })
    }

    pub fn n_stimuli(&self) -> usize {
        self.unit.nrows()
    }

    pub fn judge(&self, trial: &TripletTrial) -> Result<Judgment> {
        check_members(trial, self.unit.nrows())?;
        let m = trial.members();
        let row = |s: usize| self.unit.row(m[s].0);
        let scores = PAIRS.map(|(a, b, _)| row(a).dot(&row(b)));
        let odd = m[choose(trial, scores, self.tie)];
        Judgment::for_trial(trial, odd, self.source)
    }
}

pub fn rating_oracle(trial: &TripletTrial, m: &RatingMatrix, tie: TieRule) -> Result<Judgment> {
    check_members(trial, m.n_stimuli())?;
    let mem = trial.members();
    let mut unit = Vec::with_capacity(3);
    for s in mem {
        let r = m.row(s);
        let n = r.dot(&r).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroRow { stimulus: s.0 });
        }
        unit.push(r.mapv(|v| v / n));
    }
    let scores = PAIRS.map(|(a, b, _)| unit[a].dot(&unit[b]));
    let odd = mem[choose(trial, scores, tie)];
    Judgment::for_trial(trial, odd, JudgmentSource::RatingOracle)
}

/// Per-stimulus feature vectors from a non-generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    values: Array2<f64>,
    source_ids: Vec<u64>,
}

impl FeatureTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Schema("feature table needs at least one column".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("feature table has non-finite entries".into()));
        }
        let source_ids = (0..values.nrows() as u64).collect();
        Ok(Self { values, source_ids })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, id: StimulusId) -> ArrayView1<'_, f64> {
        self.values.row(id.0)
    }

    /// CSV with a `stimulus_id` column followed by feature columns.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let table = read_id_table(std::fs::File::open(path)?)?;
        let mut f = Self::new(table.values)?;
        f.source_ids = table.source_ids;
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let labels: Vec<String> = (1..=self.values.ncols()).map(|i| format!("f{i}")).collect();
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_id_table(file, &labels, &self.source_ids, &self.values)
    }
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

pub fn feature_oracle(trial: &TripletTrial, f: &FeatureTable, tie: TieRule) -> Result<Judgment> {
    check_members(trial, f.values.nrows())?;
    let m = trial.members();
    for s in m {
        let r = f.row(s);
        if r.dot(&r) == 0.0 {
            return Err(Error::ZeroRow { stimulus: s.0 });
        }
    }
    let dist = |a: usize, b: usize| 1.0 - cosine(f.row(m[a]), f.row(m[b]));
    // Mean distance of each member to the other two.
    let mean_dist = [
        (dist(0, 1) + dist(0, 2)) / 2.0,
        (dist(1, 0) + dist(1, 2)) / 2.0,
        (dist(2, 0) + dist(2, 1)) / 2.0,
    ];
    // Candidate pair p excludes slot PAIRS[p].2; larger odd distance means the
    // remaining pair is the better non-odd pair.
    let scores = PAIRS.map(|(_, _, odd)| mean_dist[odd]);
    let odd = m[choose(trial, scores, tie)];
    Judgment::for_trial(trial, odd, JudgmentSource::FeatureOracle)
}

/// Feature oracle bound to a table, for batch use.
pub struct FeatureOracle<'a> {
    pub table: &'a FeatureTable,
    pub tie: TieRule,
}

impl FeatureOracle<'_> {
    pub fn judge(&self, trial: &TripletTrial) -> Result<Judgment> {
        feature_oracle(trial, self.table, self.tie)
    }
}

/// Judges trials in parallel; output order matches input order.
pub fn judge_all<F>(trials: &[TripletTrial], judge: F) -> Result<Vec<Judgment>>
where
    F: Fn(&TripletTrial) -> Result<Judgment> + Sync + Send,
{
    trials.par_iter().map(judge).collect()
}
