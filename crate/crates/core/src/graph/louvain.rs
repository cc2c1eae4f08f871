//! Seeded Louvain community detection on absolute edge weights.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::AffectGraph;
use crate::error::{Error, Result};

/// Independent Louvain runs; the partition with the highest modularity wins.
pub const LOUVAIN_RESTARTS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityPartition {
    /// Non-isolated nodes, ascending.
    pub nodes: Vec<usize>,
    /// Community of each entry of `nodes`, numbered by first appearance.
    pub community: Vec<usize>,
    pub modularity: f64,
    pub isolated: Vec<usize>,
}

impl CommunityPartition {
    pub fn n_communities(&self) -> usize {
        self.community.iter().max().map_or(0, |m| m + 1)
    }

    /// Member nodes of each community.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_communities()];
        for (&n, &c) in self.nodes.iter().zip(&self.community) {
            out[c].push(n);
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["component", "community"]).map_err(|e| Error::Schema(e.to_string()))?;
        for (n, c) in self.nodes.iter().zip(&self.community) {
            w.write_record([n.to_string(), c.to_string()]).map_err(|e| Error::Schema(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted modularity of `assignment` on symmetric weights `w`.
pub fn modularity(w: &Array2<f64>, assignment: &[usize]) -> f64 {
    let k: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..assignment.len() {
        for j in 0..assignment.len() {
            if assignment[i] == assignment[j] {
                q += w[[i, j]] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// One level of greedy single-node moves from singletons. Returns the
/// relabeled communities and whether anything moved.
fn local_moves(w: &Array2<f64>, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = w.nrows();
    let k: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &i in &order {
            let own = comm[i];
            tot[own] -= k[i];
            let mut links = std::collections::BTreeMap::new();
            for j in 0..n {
                if j != i && w[[i, j]] > 0.0 {
                    *links.entry(comm[j]).or_insert(0.0) += w[[i, j]];
                }
            }
            let gain = |c: usize, l: f64| l - tot[c] * k[i] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, links.get(&own).copied().unwrap_or(0.0));
            for (&c, &l) in &links {
                let g = gain(c, l);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += k[i];
            if best != own {
                comm[i] = best;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (relabel(&comm), moved_any)
}

fn relabel(comm: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    comm.iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

fn aggregate(w: &Array2<f64>, comm: &[usize], n_comm: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n_comm, n_comm));
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            out[[comm[i], comm[j]]] += w[[i, j]];
        }
    }
    out
}

fn louvain_once(w: &Array2<f64>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<usize> = (0..w.nrows()).collect();
    let mut level = w.clone();
    loop {
        let (comm, moved) = local_moves(&level, &mut rng);
        if !moved {
            break;
        }
        let n_comm = comm.iter().max().map_or(0, |m| m + 1);
        for a in assignment.iter_mut() {
            *a = comm[*a];
        }
        level = aggregate(&level, &comm, n_comm);
    }
    relabel(&assignment)
}

/// Louvain partition of the non-isolated nodes of `g`, best of
/// [`LOUVAIN_RESTARTS`] seeded runs.
pub fn communities(g: &AffectGraph, seed: u64) -> Result<CommunityPartition> {
    if g.edges.is_empty() {
        return Err(Error::InvalidArgument("graph has no edges".into()));
    }
    let isolated = g.isolated();
    let nodes: Vec<usize> = (0..g.n_nodes).filter(|n| !isolated.contains(n)).collect();
    let full = g.abs_adjacency();
    let w = Array2::from_shape_fn((nodes.len(), nodes.len()), |(i, j)| full[[nodes[i], nodes[j]]]);
    let runs: Vec<(Vec<usize>, f64)> = (0..LOUVAIN_RESTARTS)
        .into_par_iter()
        .map(|r| {
            let a = louvain_once(&w, seed.wrapping_add(r));
            let q = modularity(&w, &a);
            (a, q)
        })
        .collect();
    let (community, q) = runs
        .into_iter()
        .fold(None, |best: Option<(Vec<usize>, f64)>, (a, q)| match best {
            Some((_, bq)) if bq >= q => best,
            _ => Some((a, q)),
        })
        .unwrap();
    Ok(CommunityPartition { nodes, community, modularity: q, isolated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn clique_edges(nodes: &[usize], w: f64) -> Vec<Edge> {
        let mut out = Vec::new();
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                out.push(Edge { src: i, dst: j, weight: w });
            }
        }
        out
    }

    #[test]
    fn single_clique_one_community() {
        let g = AffectGraph::new(5, clique_edges(&[0, 1, 2, 3], 0.8), 0.2).unwrap();
        let p = communities(&g, 1).unwrap();
        assert_eq!(p.nodes, vec![0, 1, 2, 3]);
        assert_eq!(p.community, vec![0, 0, 0, 0]);
        assert_eq!(p.isolated, vec![4]);
        assert!(p.modularity.abs() < 1e-12);
    }

    #[test]
    fn two_cliques_split() {
        let mut e = clique_edges(&[0, 1, 2], 0.9);
        e.extend(clique_edges(&[3, 4, 5], -0.9));
        e.push(Edge { src: 2, dst: 3, weight: 0.25 });
        let g = AffectGraph::new(6, e, 0.2).unwrap();
        let p = communities(&g, 0).unwrap();
        assert_eq!(p.community, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(p.groups(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn edgeless_is_error() {
        let g = AffectGraph::new(3, vec![], 0.2).unwrap();
        assert!(communities(&g, 0).is_err());
    }
}
