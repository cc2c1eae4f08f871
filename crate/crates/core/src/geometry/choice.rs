//! Choice-probability RSMs and reliability-corrected consistency.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

use super::{rsm_correlation, CorrelationMethod, Rsm, RsmKind};
use crate::corpus::StimulusId;
use crate::error::{Error, Result};
use crate::triplets::Observation;

/// Pairs with fewer co-occurrences than this are reported as low-count.
const WARN_COUNT: u32 = 3;

#[derive(Debug, Clone)]
pub struct ChoiceRsm {
    pub rsm: Rsm,
    /// Number of trials containing each pair.
    pub counts: Array2<u32>,
    pub low_count_pairs: Vec<(StimulusId, StimulusId)>,
}

/// Entry (a, b) is the fraction of trials containing both a and b in which
/// neither was chosen as the odd one out. The diagonal is 1.
pub fn choice_rsm(obs: &[Observation], subset: &[StimulusId], min_count: u32) -> Result<ChoiceRsm> {
    let index: HashMap<StimulusId, usize> = subset.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    if index.len() != subset.len() || subset.len() < 2 {
        return Err(Error::InvalidArgument("subset must hold at least two distinct stimuli".into()));
    }
    let m = subset.len();
    let mut counts = Array2::<u32>::zeros((m, m));
    let mut kept = Array2::<u32>::zeros((m, m));
    for o in obs {
        let pos: Vec<(usize, StimulusId)> =
            o.members.iter().filter_map(|s| index.get(s).map(|&i| (i, *s))).collect();
        for x in 0..pos.len() {
            for y in x + 1..pos.len() {
                let (a, b) = (pos[x].0.min(pos[y].0), pos[x].0.max(pos[y].0));
                counts[[a, b]] += 1;
                if o.odd != pos[x].1 && o.odd != pos[y].1 {
                    kept[[a, b]] += 1;
                }
            }
        }
    }
    let mut uncovered = Vec::new();
    let mut low = Vec::new();
    let mut values = Array2::<f64>::eye(m);
    for a in 0..m {
        for b in a + 1..m {
            let c = counts[[a, b]];
            if c < min_count.max(1) {
                uncovered.push((subset[a], subset[b]));
                continue;
            }
            if c < WARN_COUNT {
                low.push((subset[a], subset[b]));
            }
            let p = kept[[a, b]] as f64 / c as f64;
            values[[a, b]] = p;
            values[[b, a]] = p;
            counts[[b, a]] = c;
        }
    }
    if !uncovered.is_empty() {
        let shown: Vec<String> = uncovered.iter().take(20).map(|(a, b)| format!("({a}, {b})")).collect();
        return Err(Error::InvalidArgument(format!(
            "{} stimulus pairs lack trials: {}{}",
            uncovered.len(),
            shown.join(", "),
            if uncovered.len() > 20 { ", ..." } else { "" }
        )));
    }
    if !low.is_empty() {
        log::warn!("{} pairs have fewer than {WARN_COUNT} trials", low.len());
    }
    Ok(ChoiceRsm { rsm: Rsm::new(values, RsmKind::ChoiceProbability, subset.to_vec())?, counts, low_count_pairs: low })
}

fn mix(seed: u64, x: u64) -> u64 {
    let mut z = x ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded split of a log into two halves that both cover every pair.
///
/// Each trial is keyed by its lowest subset pair. Within a pair's group,
/// trials are ordered by a seeded hash of their (unordered) member set and
/// assigned alternately to the two halves, so repeated presentations of the
/// same triple fall into different halves.
pub fn split_halves(
    obs: &[Observation],
    subset: &[StimulusId],
    seed: u64,
) -> (Vec<Observation>, Vec<Observation>) {
    let index: HashMap<StimulusId, usize> = subset.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut groups: BTreeMap<(usize, usize), Vec<(u64, usize)>> = BTreeMap::new();
    for (n, o) in obs.iter().enumerate() {
        let mut pos: Vec<usize> = o.members.iter().filter_map(|s| index.get(s).copied()).collect();
        if pos.len() < 2 {
            continue;
        }
        pos.sort_unstable();
        let mut sorted = o.members.map(|s| s.0 as u64);
        sorted.sort_unstable();
        let key = sorted.iter().fold(seed, |h, &v| mix(h, v));
        groups.entry((pos[0], pos[1])).or_default().push((key, n));
    }
    let (mut h1, mut h2) = (Vec::new(), Vec::new());
    for (_, mut g) in groups {
        g.sort_unstable();
        for (k, (_, n)) in g.into_iter().enumerate() {
            if k % 2 == 0 {
                h1.push(obs[n]);
            } else {
                h2.push(obs[n]);
            }
        }
    }
    (h1, h2)
}

/// Raw correlation divided by the geometric mean of two reliabilities.
pub fn reliability_corrected(raw: f64, rel_a: f64, rel_b: f64) -> Result<f64> {
    if !(rel_a > 0.0) || !(rel_b > 0.0) {
        return Err(Error::Undefined(format!(
            "split-half reliabilities must be positive (got {rel_a}, {rel_b})"
        )));
    }
    Ok(raw / (rel_a * rel_b).sqrt())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConsistencyReport {
    pub raw: f64,
    pub model_reliability: f64,
    pub human_reliability: f64,
    pub corrected: f64,
}

fn split_reliability(obs: &[Observation], subset: &[StimulusId], seed: u64) -> Result<f64> {
    let (a, b) = split_halves(obs, subset, seed);
    let ra = choice_rsm(&a, subset, 1)?;
    let rb = choice_rsm(&b, subset, 1)?;
    rsm_correlation(&ra.rsm, &rb.rsm, CorrelationMethod::Pearson)
}

/// Reliability-corrected Pearson correlation between the choice RSMs of two
/// judgment logs over `subset`.
pub fn corrected_consistency(
    model: &[Observation],
    human: &[Observation],
    subset: &[StimulusId],
    seed: u64,
) -> Result<ConsistencyReport> {
    let rm = choice_rsm(model, subset, 1)?;
    let rh = choice_rsm(human, subset, 1)?;
    let raw = rsm_correlation(&rm.rsm, &rh.rsm, CorrelationMethod::Pearson)?;
    let model_reliability = split_reliability(model, subset, seed)?;
    let human_reliability = split_reliability(human, subset, seed)?;
    let corrected = reliability_corrected(raw, model_reliability, human_reliability)?;
    Ok(ConsistencyReport { raw, model_reliability, human_reliability, corrected })
}
