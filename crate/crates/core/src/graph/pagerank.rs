//! Weighted PageRank by power iteration.

use serde::{Deserialize, Serialize};

use super::AffectGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PageRankConfig {
    pub damping: f64,
    /// Stop when no score changes by more than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self { damping: 0.85, tol: 1e-9, max_iter: 10_000 }
    }
}

/// Scores over all nodes, summing to 1. Transitions follow absolute edge
/// weights; nodes without edges spread their mass uniformly.
pub fn pagerank(g: &AffectGraph, cfg: &PageRankConfig) -> Result<Vec<f64>> {
    let n = g.n_nodes;
    if n == 0 {
        return Err(Error::InvalidArgument("graph has no nodes".into()));
    }
    if !(0.0..1.0).contains(&cfg.damping) {
        return Err(Error::InvalidArgument(format!("damping must be in [0, 1), got {}", cfg.damping)));
    }
    let a = g.abs_adjacency();
    let out: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    let nf = n as f64;
    let mut r = vec![1.0 / nf; n];
    for _ in 0..cfg.max_iter {
        let dangling: f64 = (0..n).filter(|&i| out[i] == 0.0).map(|i| r[i]).sum();
        let base = (1.0 - cfg.damping) / nf + cfg.damping * dangling / nf;
        let mut next = vec![base; n];
        for i in 0..n {
            if out[i] > 0.0 {
                let share = cfg.damping * r[i] / out[i];
                for j in 0..n {
                    next[j] += share * a[[i, j]];
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let change = next.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r = next;
        if change < cfg.tol {
            return Ok(r);
        }
    }
    Err(Error::NonConvergence { iterations: cfg.max_iter })
}
