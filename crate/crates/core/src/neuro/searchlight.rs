//! Spherical-searchlight RSA over a voxel grid.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::volume::{n_voxels, voxel_coords, voxel_index, Shape, SyntheticVolume};
use crate::corpus::StimulusId;
use crate::error::{Error, Result};
use crate::geometry::Rsm;
use crate::stats::{pearson, ranks};

/// Offsets within Euclidean distance `radius` of the origin, in
/// lexicographic order.
pub fn sphere_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Flat indices of sphere members around `center`, truncated at the grid edge.
pub fn sphere_members(shape: Shape, center: usize, offsets: &[[isize; 3]]) -> Vec<usize> {
    let c = voxel_coords(shape, center);
    offsets
        .iter()
        .filter_map(|o| {
            let mut v = [0usize; 3];
            for a in 0..3 {
                let p = c[a] as isize + o[a];
                if p < 0 || p >= shape[a] as isize {
                    return None;
                }
                v[a] = p as usize;
            }
            Some(voxel_index(shape, v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewVoxels,
    ConstantPattern,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchlightMap {
    pub shape: Shape,
    pub radius: usize,
    /// Spearman correlation per voxel; `None` where skipped.
    pub values: Vec<Option<f64>>,
    pub skipped: Vec<(usize, SkipReason)>,
}

impl SearchlightMap {
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
    }
}

/// Upper triangle of the stimulus-by-stimulus Pearson correlation of
/// activity patterns over `voxels`.
fn neural_triangle(y: ArrayView2<f64>, rows: &[usize], voxels: &[usize]) -> std::result::Result<Vec<f64>, SkipReason> {
    if voxels.len() < 2 {
        return Err(SkipReason::TooFewVoxels);
    }
    let patterns: Vec<Vec<f64>> = rows.iter().map(|&s| voxels.iter().map(|&v| y[[s, v]]).collect()).collect();
    let mut out = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            out.push(pearson(&patterns[i], &patterns[j]).ok_or(SkipReason::ConstantPattern)?);
        }
    }
    Ok(out)
}

fn prepare(vol: &SyntheticVolume, model: &Rsm, radius: usize, subset: &[StimulusId]) -> Result<(Vec<usize>, Rsm)> {
    if radius < 1 {
        return Err(Error::InvalidArgument("searchlight radius must be at least 1".into()));
    }
    if subset.len() < 3 {
        return Err(Error::InvalidArgument("searchlight needs at least three stimuli".into()));
    }
    let rows: Vec<usize> = subset
        .iter()
        .map(|s| {
            if s.index() < vol.n_stimuli() {
                Ok(s.index())
            } else {
                Err(Error::InvalidArgument(format!("stimulus {s} is not in the volume")))
            }
        })
        .collect::<Result<_>>()?;
    Ok((rows, model.select(subset)?))
}

/// Spearman correlation between each voxel's neural RSM and `model`.
pub fn searchlight(vol: &SyntheticVolume, model: &Rsm, radius: usize, subset: &[StimulusId]) -> Result<SearchlightMap> {
    let (rows, model) = prepare(vol, model, radius, subset)?;
    let model_ranks = ranks(&model.upper_triangle());
    if model_ranks.iter().all(|&r| r == model_ranks[0]) {
        return Err(Error::Undefined("model RSM triangle has zero variance".into()));
    }
    let shape = vol.shape();
    let offsets = sphere_offsets(radius);
    let y = vol.responses().view();
    let results: Vec<std::result::Result<Option<f64>, SkipReason>> = (0..n_voxels(shape))
        .into_par_iter()
        .map(|v| {
            let tri = neural_triangle(y, &rows, &sphere_members(shape, v, &offsets))?;
            Ok(pearson(&ranks(&tri), &model_ranks))
        })
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (v, r) in results.into_iter().enumerate() {
        match r {
            Ok(val) => values.push(val),
            Err(reason) => {
                values.push(None);
                skipped.push((v, reason));
            }
        }
    }
    Ok(SearchlightMap { shape, radius, values, skipped })
}

/// Searchlight values under `permutations` random relabelings of the model
/// RSM's stimuli (rows: permutations, columns: voxels; NaN where skipped).
pub fn searchlight_null(
    vol: &SyntheticVolume,
    model: &Rsm,
    radius: usize,
    subset: &[StimulusId],
    permutations: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let (rows, model) = prepare(vol, model, radius, subset)?;
    let m = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm_ranks: Vec<Vec<f64>> = (0..permutations)
        .map(|_| {
            let mut p: Vec<usize> = (0..m).collect();
            p.shuffle(&mut rng);
            let mv = model.values();
            let mut tri = Vec::with_capacity(m * (m - 1) / 2);
            for i in 0..m {
                for j in i + 1..m {
                    tri.push(mv[[p[i], p[j]]]);
                }
            }
            ranks(&tri)
        })
        .collect();
    let shape = vol.shape();
    let offsets = sphere_offsets(radius);
    let y = vol.responses().view();
    let cols: Vec<Vec<f64>> = (0..n_voxels(shape))
        .into_par_iter()
        .map(|v| match neural_triangle(y, &rows, &sphere_members(shape, v, &offsets)) {
            Ok(tri) => {
                let nr = ranks(&tri);
                perm_ranks.iter().map(|pr| pearson(&nr, pr).unwrap_or(f64::NAN)).collect()
            }
            Err(_) => vec![f64::NAN; permutations],
        })
        .collect();
    Ok(Array2::from_shape_fn((permutations, cols.len()), |(r, v)| cols[v][r]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_spheres() {
        assert_eq!(sphere_offsets(1).len(), 7);
        assert_eq!(sphere_offsets(2).len(), 33);
        assert_eq!(sphere_offsets(3).len(), 123);
        let shape = [5, 5, 5];
        assert_eq!(sphere_members(shape, voxel_index(shape, [2, 2, 2]), &sphere_offsets(1)).len(), 7);
        assert_eq!(sphere_members(shape, 0, &sphere_offsets(1)).len(), 4);
    }
}
