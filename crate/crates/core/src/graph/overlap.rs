//! Matching communities across systems by their component labels.

use std::collections::BTreeSet;

use serde::Serialize;

use super::CommunityPartition;
use crate::error::{Error, Result};
use crate::geometry::ComponentLabel;

/// Communities of one system, each described by the union of its
/// components' suffixed labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemClusters {
    pub name: String,
    pub clusters: Vec<BTreeSet<String>>,
}

/// Label sets for each community of `partition`. Components without labels
/// are left out; communities left with no labels are dropped.
pub fn system_clusters(name: &str, partition: &CommunityPartition, labels: &[ComponentLabel]) -> SystemClusters {
    let mut clusters = Vec::new();
    for group in partition.groups() {
        let mut set = BTreeSet::new();
        for c in group {
            match labels.iter().find(|l| l.component == c) {
                Some(l) if !l.terms.is_empty() => set.extend(l.terms.iter().map(|t| t.label())),
                _ => log::warn!("{name}: component {c} has no label and is excluded from overlap"),
            }
        }
        if !set.is_empty() {
            clusters.push(set);
        }
    }
    SystemClusters { name: name.to_string(), clusters }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMatch {
    pub system: usize,
    pub cluster: usize,
    /// Best-matching cluster in every other system: `(system, cluster, jaccard)`.
    pub best: Vec<(usize, usize, f64)>,
    /// Matched at or above the threshold in at least one other system.
    pub shared: bool,
    /// Matched at or above the threshold in every other system.
    pub conserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub threshold: f64,
    pub systems: Vec<String>,
    pub clusters: Vec<ClusterMatch>,
}

impl OverlapReport {
    pub fn n_shared(&self) -> usize {
        self.clusters.iter().filter(|c| c.shared).count()
    }

    pub fn n_conserved(&self) -> usize {
        self.clusters.iter().filter(|c| c.conserved).count()
    }
}

pub fn cluster_overlap(systems: &[SystemClusters], threshold: f64) -> Result<OverlapReport> {
    if systems.len() < 2 {
        return Err(Error::InvalidArgument("overlap needs at least two systems".into()));
    }
    let mut clusters = Vec::new();
    for (s, sys) in systems.iter().enumerate() {
        for (c, set) in sys.clusters.iter().enumerate() {
            let best: Vec<(usize, usize, f64)> = systems
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != s)
                .filter_map(|(o, other)| {
                    other
                        .clusters
                        .iter()
                        .enumerate()
                        .map(|(oc, os)| (o, oc, jaccard(set, os)))
                        .fold(None, |acc: Option<(usize, usize, f64)>, x| match acc {
                            Some(a) if a.2 >= x.2 => Some(a),
                            _ => Some(x),
                        })
                })
                .collect();
            let hits = best.iter().filter(|b| b.2 >= threshold).count();
            clusters.push(ClusterMatch {
                system: s,
                cluster: c,
                shared: hits > 0,
                conserved: hits == systems.len() - 1 && best.len() == systems.len() - 1,
                best,
            });
        }
    }
    Ok(OverlapReport { threshold, systems: systems.iter().map(|s| s.name.clone()).collect(), clusters })
}
