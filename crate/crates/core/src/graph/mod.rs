//! Component correlation graphs, communities, centrality, cross-system
//! cluster overlap and per-stimulus component pruning.

mod louvain;
mod overlap;
mod pagerank;
mod prune;

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pearson;

pub use louvain::{communities, modularity, CommunityPartition, LOUVAIN_RESTARTS};
pub use overlap::{cluster_overlap, system_clusters, ClusterMatch, OverlapReport, SystemClusters};
pub use pagerank::{pagerank, PageRankConfig};
pub use prune::{keep_top_k, prune_components, PrunePoint, PruningCurve};

/// Edge weights entering modularity and PageRank.
pub const WEIGHT_CONVENTION: &str = "absolute Pearson r";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Signed Pearson correlation.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectGraph {
    pub n_nodes: usize,
    /// Sorted by `(src, dst)` with `src < dst`.
    pub edges: Vec<Edge>,
    pub threshold: f64,
    /// Constant columns, kept as edgeless nodes.
    pub constant: Vec<usize>,
}

impl AffectGraph {
    pub fn new(n_nodes: usize, mut edges: Vec<Edge>, threshold: f64) -> Result<Self> {
        for e in &mut edges {
            if e.src == e.dst || e.src.max(e.dst) >= n_nodes || !e.weight.is_finite() {
                return Err(Error::Schema(format!("invalid edge {}-{} ({})", e.src, e.dst, e.weight)));
            }
            if e.src > e.dst {
                std::mem::swap(&mut e.src, &mut e.dst);
            }
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        if edges.windows(2).any(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst)) {
            return Err(Error::Schema("duplicate edge".into()));
        }
        Ok(Self { n_nodes, edges, threshold, constant: Vec::new() })
    }

    /// Symmetric matrix of absolute edge weights.
    pub fn abs_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_nodes, self.n_nodes));
        for e in &self.edges {
            a[[e.src, e.dst]] = e.weight.abs();
            a[[e.dst, e.src]] = e.weight.abs();
        }
        a
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.src == node || e.dst == node).count()
    }

    pub fn isolated(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_nodes];
        for e in &self.edges {
            seen[e.src] = true;
            seen[e.dst] = true;
        }
        (0..self.n_nodes).filter(|&i| !seen[i]).collect()
    }

    /// Edge list CSV `src,dst,weight`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["src", "dst", "weight"]).map_err(csv_err)?;
        for e in &self.edges {
            w.write_record([e.src.to_string(), e.dst.to_string(), e.weight.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an edge list. Without `n_nodes` the node count is one past the
    /// largest index seen, so trailing isolated nodes are lost.
    pub fn read_csv<R: Read>(r: R, n_nodes: Option<usize>, threshold: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut edges = Vec::new();
        for (line, rec) in rd.deserialize::<Edge>().enumerate() {
            edges.push(rec.map_err(|e| Error::Ingest { line: line as u64 + 2, message: e.to_string() })?);
        }
        let n = n_nodes.unwrap_or_else(|| edges.iter().map(|e| e.src.max(e.dst) + 1).max().unwrap_or(0));
        Self::new(n, edges, threshold)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(e.to_string())
}

/// Nodes are columns of `x`; an edge joins two columns whose Pearson
/// correlation exceeds `threshold` in absolute value.
pub fn build_graph(x: ArrayView2<f64>, threshold: f64) -> Result<AffectGraph> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold must be in [0, 1), got {threshold}")));
    }
    let d = x.ncols();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("graph needs at least two components, got {d}")));
    }
    let cols: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
    let constant: Vec<usize> = (0..d).filter(|&i| cols[i].iter().all(|&v| v == cols[i][0])).collect();
    if !constant.is_empty() {
        log::warn!("constant components {constant:?} have no edges");
    }
    let mut edges = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            if let Some(r) = pearson(&cols[i], &cols[j]) {
                if r.abs() > threshold {
                    edges.push(Edge { src: i, dst: j, weight: r });
                }
            }
        }
    }
    let mut g = AffectGraph::new(d, edges, threshold)?;
    g.constant = constant;
    Ok(g)
}
