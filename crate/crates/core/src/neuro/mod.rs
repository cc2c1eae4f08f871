//! Voxel-wise encoding and searchlight RSA on synthetic volumes.

mod ridge;
mod searchlight;
mod volume;

use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::benjamini_hochberg;

pub use ridge::{
    encode, encode_matrix, kfold, log_grid, reliability_rank, select_lambda, EncodeConfig, EncodingResult,
    ReliabilityRanking, RidgeForm, RidgeSolver,
};
pub use searchlight::{searchlight, searchlight_null, sphere_members, sphere_offsets, SearchlightMap, SkipReason};
pub use volume::{
    make_volume, make_volume_n, n_voxels, voxel_coords, voxel_index, Planting, Region, Shape, SyntheticVolume,
    VolumeMeta,
};

/// How voxel significance is assessed; recorded alongside exported maps.
pub const SIGNIFICANCE_METHOD: &str =
    "two-sided permutation p-values per voxel, Benjamini-Hochberg FDR across voxels (replaces across-subject t-tests)";

/// A per-voxel scalar map over a grid.
pub trait VoxelMap {
    fn shape(&self) -> Shape;
    fn voxel_values(&self) -> Vec<Option<f64>>;
}

impl VoxelMap for SearchlightMap {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn voxel_values(&self) -> Vec<Option<f64>> {
        self.values.clone()
    }
}

impl VoxelMap for EncodingResult {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn voxel_values(&self) -> Vec<Option<f64>> {
        self.r.clone()
    }
}

/// CSV `x,y,z,value`; undefined voxels have an empty value.
pub fn write_map_csv<W: Write>(map: &impl VoxelMap, w: W) -> Result<()> {
    let shape = map.shape();
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["x", "y", "z", "value"]).map_err(csv_err)?;
    for (i, v) in map.voxel_values().iter().enumerate() {
        let [x, y, z] = voxel_coords(shape, i);
        let value = v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([x.to_string(), y.to_string(), z.to_string(), value]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// A voxel map read back from CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoxelValues {
    pub shape: Shape,
    pub values: Vec<Option<f64>>,
}

impl VoxelMap for VoxelValues {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn voxel_values(&self) -> Vec<Option<f64>> {
        self.values.clone()
    }
}

/// Reads a map written by [`write_map_csv`]. The grid shape is one past the
/// largest coordinate on each axis; every voxel must appear exactly once.
pub fn read_map_csv<R: std::io::Read>(r: R) -> Result<VoxelValues> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let line = n as u64 + 2;
        let rec = rec.map_err(|e| Error::Ingest { line, message: e.to_string() })?;
        if rec.len() != 4 {
            return Err(Error::Ingest { line, message: format!("expected 4 fields, found {}", rec.len()) });
        }
        let coord = |i: usize| {
            rec[i].trim().parse::<usize>().map_err(|e| Error::Ingest { line, message: format!("{}: {e}", &rec[i]) })
        };
        let value = match rec[3].trim() {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|e| Error::Ingest { line, message: format!("{v}: {e}") })?),
        };
        rows.push(([coord(0)?, coord(1)?, coord(2)?], value));
    }
    if rows.is_empty() {
        return Err(Error::Schema("map file has no voxels".into()));
    }
    let mut shape = [0usize; 3];
    for (c, _) in &rows {
        for a in 0..3 {
            shape[a] = shape[a].max(c[a] + 1);
        }
    }
    if rows.len() != n_voxels(shape) {
        return Err(Error::Schema(format!("{} rows for a {shape:?} grid", rows.len())));
    }
    let mut values = vec![None; rows.len()];
    let mut seen = vec![false; rows.len()];
    for (c, v) in rows {
        let i = voxel_index(shape, c);
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Schema(format!("voxel {c:?} listed twice")));
        }
        values[i] = v;
    }
    Ok(VoxelValues { shape, values })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct MapComparison {
    /// `a - b` per voxel, where both are defined.
    pub diff: Vec<Option<f64>>,
    pub n_compared: usize,
    /// Fraction of compared voxels where `a > b`.
    pub fraction_a: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_a / mean_b`.
    pub ratio: f64,
}

pub fn map_compare<M: VoxelMap>(a: &M, b: &M) -> Result<MapComparison> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("map shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    let (va, vb) = (a.voxel_values(), b.voxel_values());
    let diff: Vec<Option<f64>> = va.iter().zip(&vb).map(|(x, y)| Some((*x)? - (*y)?)).collect();
    let pairs: Vec<(f64, f64)> = va.iter().zip(&vb).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    let n = pairs.len();
    let nf = n as f64;
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    Ok(MapComparison {
        diff,
        n_compared: n,
        fraction_a: pairs.iter().filter(|p| p.0 > p.1).count() as f64 / nf,
        mean_a,
        mean_b,
        ratio: mean_a / mean_b,
    })
}

/// Two-sided permutation p-value per voxel, `(1 + #{|null| >= |obs|}) / (1 + R)`
/// over the finite null draws. `null` is permutations × voxels.
pub fn permutation_pvalues(observed: &[Option<f64>], null: &Array2<f64>) -> Result<Vec<Option<f64>>> {
    if null.ncols() != observed.len() {
        return Err(Error::ShapeMismatch(format!("{} observed voxels vs {} null columns", observed.len(), null.ncols())));
    }
    Ok(observed
        .iter()
        .zip(null.columns())
        .map(|(obs, col)| {
            let obs = obs.filter(|v| v.is_finite())?;
            let draws: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
            let exceed = draws.iter().filter(|v| v.abs() >= obs.abs()).count();
            Some((1 + exceed) as f64 / (1 + draws.len()) as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Significance {
    pub method: &'static str,
    pub alpha: f64,
    pub p: Vec<Option<f64>>,
    pub significant: Vec<bool>,
}

/// Permutation p-values with Benjamini-Hochberg control over defined voxels.
pub fn significance(observed: &[Option<f64>], null: &Array2<f64>, alpha: f64) -> Result<Significance> {
    let p = permutation_pvalues(observed, null)?;
    let idx: Vec<usize> = (0..p.len()).filter(|&i| p[i].is_some()).collect();
    let vals: Vec<f64> = idx.iter().map(|&i| p[i].unwrap()).collect();
    let mut significant = vec![false; p.len()];
    for (&i, s) in idx.iter().zip(benjamini_hochberg(&vals, alpha)) {
        significant[i] = s;
    }
    Ok(Significance { method: SIGNIFICANCE_METHOD, alpha, p, significant })
}
