//! Sparse dyad-complete trial sampling.
//!
//! Every unordered pair of stimuli is visited once; for each pair, `per_dyad`
//! distinct third stimuli are drawn uniformly from the rest of the pool.
//! Member order within each emitted trial is a seeded shuffle so that the
//! odd-one-out position is balanced by construction.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TripletTrial;
use crate::corpus::StimulusId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleCounts {
    pub dyads: u64,
    pub trials: u64,
}

fn check_pool(n_stimuli: usize, per_dyad: usize) -> Result<()> {
    if per_dyad == 0 {
        return Err(Error::Sampling("per_dyad must be at least 1".into()));
    }
    if n_stimuli < per_dyad + 2 {
        return Err(Error::Sampling(format!(
            "{n_stimuli} stimuli leave {} candidates per dyad, {per_dyad} distinct thirds needed",
            n_stimuli.saturating_sub(2)
        )));
    }
    Ok(())
}

/// Counts dyads and trials without generating them.
pub fn count_trials(n_stimuli: usize, per_dyad: usize) -> Result<SampleCounts> {
    check_pool(n_stimuli, per_dyad)?;
    let n = n_stimuli as u64;
    let dyads = n * (n - 1) / 2;
    Ok(SampleCounts { dyads, trials: dyads * per_dyad as u64 })
}

/// Lazily generates the trial set, dyads in lexicographic order.
pub struct TrialSampler {
    n: usize,
    per_dyad: usize,
    rng: ChaCha8Rng,
    a: usize,
    b: usize,
    pending: Vec<[usize; 3]>,
    next_id: u64,
}

impl TrialSampler {
    pub fn new(n_stimuli: usize, per_dyad: usize, seed: u64) -> Result<Self> {
        check_pool(n_stimuli, per_dyad)?;
        Ok(Self {
            n: n_stimuli,
            per_dyad,
            rng: ChaCha8Rng::seed_from_u64(seed),
            a: 0,
            b: 1,
            pending: Vec::with_capacity(per_dyad),
            next_id: 0,
        })
    }

    fn refill(&mut self) -> bool {
        if self.a + 1 >= self.n {
            return false;
        }
        let (a, b) = (self.a, self.b);
        let thirds = index::sample(&mut self.rng, self.n - 2, self.per_dyad);
        for r in thirds.iter() {
            // map [0, n-2) onto [0, n) \ {a, b}
            let mut c = r;
            if c >= a {
                c += 1;
            }
            if c >= b {
                c += 1;
            }
            let mut m = [a, b, c];
            m.shuffle(&mut self.rng);
            self.pending.push(m);
        }
        self.pending.reverse();
        self.b += 1;
        if self.b == self.n {
            self.a += 1;
            self.b = self.a + 1;
        }
        true
    }
}

impl Iterator for TrialSampler {
    type Item = TripletTrial;

    fn next(&mut self) -> Option<TripletTrial> {
        if self.pending.is_empty() && !self.refill() {
            return None;
        }
        let m = self.pending.pop()?;
        let id = self.next_id;
        self.next_id += 1;
        Some(TripletTrial { trial_id: id, members: m.map(StimulusId) })
    }
}

pub fn sample_trials(n_stimuli: usize, per_dyad: usize, seed: u64) -> Result<Vec<TripletTrial>> {
    let counts = count_trials(n_stimuli, per_dyad)?;
    let mut out = Vec::with_capacity(counts.trials as usize);
    out.extend(TrialSampler::new(n_stimuli, per_dyad, seed)?);
    Ok(out)
}

/// Pairs every dyad of `prototypes` with `fillers` distinct stimuli drawn
/// from `0..pool` excluding the prototype set.
pub fn sample_validation_trials(
    prototypes: &[StimulusId],
    fillers: usize,
    pool: usize,
    seed: u64,
) -> Result<Vec<TripletTrial>> {
    let mut sorted = prototypes.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != prototypes.len() {
        return Err(Error::Sampling("prototype stimuli must be distinct".into()));
    }
    if prototypes.len() < 2 {
        return Err(Error::Sampling("at least two prototypes are needed".into()));
    }
    if let Some(p) = prototypes.iter().find(|p| p.0 >= pool) {
        return Err(Error::Sampling(format!("prototype {p} outside pool of {pool}")));
    }
    if fillers == 0 || fillers > pool - prototypes.len() {
        return Err(Error::Sampling(format!(
            "{fillers} fillers requested from {} non-prototype stimuli",
            pool - prototypes.len()
        )));
    }
    let candidates: Vec<usize> =
        (0..pool).filter(|i| sorted.binary_search(&StimulusId(*i)).is_err()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = prototypes.len();
    let mut out = Vec::with_capacity(p * (p - 1) / 2 * fillers);
    for i in 0..p {
        for j in i + 1..p {
            for r in index::sample(&mut rng, candidates.len(), fillers).iter() {
                let mut m = [prototypes[i].0, prototypes[j].0, candidates[r]];
                m.shuffle(&mut rng);
                out.push(TripletTrial { trial_id: out.len() as u64, members: m.map(StimulusId) });
            }
        }
    }
    Ok(out)
}
