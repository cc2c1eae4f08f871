//! Synthetic voxel volumes with planted model-driven regions.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &str = "AGVOL1";

/// Voxel grid dimensions `(X, Y, Z)`. Voxel `(x, y, z)` has flat index
/// `(x * Y + y) * Z + z`.
pub type Shape = [usize; 3];

pub fn n_voxels(shape: Shape) -> usize {
    shape.iter().product()
}

pub fn voxel_index(shape: Shape, [x, y, z]: [usize; 3]) -> usize {
    (x * shape[1] + y) * shape[2] + z
}

pub fn voxel_coords(shape: Shape, i: usize) -> [usize; 3] {
    [i / (shape[1] * shape[2]), (i / shape[2]) % shape[1], i % shape[2]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    /// Half-open box `min <= v < max` on every axis.
    Box { min: [usize; 3], max: [usize; 3] },
    /// Voxels within Euclidean distance `radius` of `center`.
    Sphere { center: [usize; 3], radius: f64 },
}

impl Region {
    pub fn contains(&self, v: [usize; 3]) -> bool {
        match self {
            Region::Box { min, max } => (0..3).all(|a| v[a] >= min[a] && v[a] < max[a]),
            Region::Sphere { center, radius } => {
                let d2: f64 = (0..3).map(|a| (v[a] as f64 - center[a] as f64).powi(2)).sum();
                d2 <= radius * radius
            }
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        let ok = match self {
            Region::Box { min, max } => (0..3).all(|a| min[a] < max[a] && max[a] <= shape[a]),
            Region::Sphere { center, radius } => *radius >= 0.0 && (0..3).all(|a| center[a] < shape[a]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("region {self:?} does not fit in shape {shape:?}")))
        }
    }

    /// Flat indices of member voxels, ascending.
    pub fn voxels(&self, shape: Shape) -> Vec<usize> {
        (0..n_voxels(shape)).filter(|&i| self.contains(voxel_coords(shape, i))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planting {
    pub region: Region,
    /// Index into the model list passed to [`make_volume`].
    pub model: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub shape: Shape,
    pub n_stimuli: usize,
    pub seed: u64,
    pub noise_sd: f64,
    pub plantings: Vec<Planting>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVolume {
    pub meta: VolumeMeta,
    /// Stimuli × voxels, z-scored per voxel.
    responses: Array2<f64>,
}

fn zscore_column(mut col: ndarray::ArrayViewMut1<f64>) -> bool {
    let n = col.len() as f64;
    let m = col.sum() / n;
    col.mapv_inplace(|v| v - m);
    let sd = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        col.mapv_inplace(|v| v / sd);
        true
    } else {
        false
    }
}

impl SyntheticVolume {
    pub fn new(meta: VolumeMeta, responses: Array2<f64>) -> Result<Self> {
        if responses.dim() != (meta.n_stimuli, n_voxels(meta.shape)) {
            return Err(Error::ShapeMismatch(format!(
                "responses are {:?}, header says {} stimuli × {} voxels",
                responses.dim(),
                meta.n_stimuli,
                n_voxels(meta.shape)
            )));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("volume responses must be finite".into()));
        }
        Ok(Self { meta, responses })
    }

    pub fn shape(&self) -> Shape {
        self.meta.shape
    }

    pub fn responses(&self) -> &Array2<f64> {
        &self.responses
    }

    pub fn n_stimuli(&self) -> usize {
        self.responses.nrows()
    }

    /// Model planted at each voxel, if any.
    pub fn planted_model(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; n_voxels(self.meta.shape)];
        for p in &self.meta.plantings {
            for v in p.region.voxels(self.meta.shape) {
                out[v] = Some(p.model);
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "{}", serde_json::to_string(&self.meta)?)?;
        let mut buf = Vec::with_capacity(self.responses.len() * 8);
        for v in self.responses.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Integrity("not a volume file".into()));
        }
        line.clear();
        r.read_line(&mut line)?;
        let meta: VolumeMeta = serde_json::from_str(line.trim_end())?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let len = meta.n_stimuli * n_voxels(meta.shape);
        if bytes.len() != len * 8 {
            return Err(Error::Integrity(format!("payload has {} bytes, expected {}", bytes.len(), len * 8)));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let responses = Array2::from_shape_vec((meta.n_stimuli, n_voxels(meta.shape)), values)
            .map_err(|e| Error::Integrity(e.to_string()))?;
        Self::new(meta, responses)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

/// Build a volume in which each planted voxel carries a random linear mixture
/// of its model's features plus Gaussian noise and every other voxel is pure
/// noise.
///
/// The mixture signal is standardized before `noise_sd` is applied, so
/// `noise_sd` is relative to a unit-variance signal. All voxels are z-scored
/// at the end.
pub fn make_volume(
    shape: Shape,
    models: &[ArrayView2<f64>],
    plantings: &[Planting],
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticVolume> {
    let n = match models.first() {
        Some(m) => m.nrows(),
        None if plantings.is_empty() => {
            return Err(Error::InvalidArgument("need a model or an explicit stimulus count".into()))
        }
        None => return Err(Error::InvalidArgument("plantings refer to missing models".into())),
    };
    if models.iter().any(|m| m.nrows() != n) {
        return Err(Error::ShapeMismatch("models differ in stimulus count".into()));
    }
    make_volume_n(shape, n, models, plantings, noise_sd, seed)
}

/// As [`make_volume`] with an explicit stimulus count, allowing a pure-noise
/// volume with no models.
pub fn make_volume_n(
    shape: Shape,
    n_stimuli: usize,
    models: &[ArrayView2<f64>],
    plantings: &[Planting],
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticVolume> {
    if n_stimuli < 2 || shape.contains(&0) {
        return Err(Error::InvalidArgument("volume needs at least two stimuli and a non-empty grid".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be non-negative, got {noise_sd}")));
    }
    let v = n_voxels(shape);
    let mut owner: Vec<Option<usize>> = vec![None; v];
    for p in plantings {
        p.region.check(shape)?;
        if p.model >= models.len() {
            return Err(Error::InvalidArgument(format!("planting refers to model {} of {}", p.model, models.len())));
        }
        if models[p.model].nrows() != n_stimuli {
            return Err(Error::ShapeMismatch(format!("model {} has the wrong stimulus count", p.model)));
        }
        for i in p.region.voxels(shape) {
            match owner[i] {
                Some(m) if m != p.model => {
                    return Err(Error::InvalidArgument(format!(
                        "voxel {:?} is planted with models {m} and {}",
                        voxel_coords(shape, i),
                        p.model
                    )))
                }
                _ => owner[i] = Some(p.model),
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut responses = Array2::<f64>::zeros((n_stimuli, v));
    for (i, mut col) in responses.columns_mut().into_iter().enumerate() {
        match owner[i] {
            Some(m) => {
                let x = models[m];
                let w = Array1::from_shape_fn(x.ncols(), |_| normal());
                let mut signal = x.dot(&w);
                if !zscore_column(signal.view_mut()) {
                    return Err(Error::Undefined(format!(
                        "planted signal at voxel {:?} is constant",
                        voxel_coords(shape, i)
                    )));
                }
                for (c, s) in col.iter_mut().zip(signal.iter()) {
                    *c = s + noise_sd * normal();
                }
            }
            None => col.mapv_inplace(|_| normal()),
        }
        zscore_column(col);
    }
    let meta = VolumeMeta { shape, n_stimuli, seed, noise_sd, plantings: plantings.to_vec() };
    SyntheticVolume::new(meta, responses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn model(n: usize, d: usize, salt: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| ((i * 7 + j * 3) as f64 * 0.61 + salt).sin().abs())
    }

    #[test]
    fn index_round_trip() {
        let s = [3, 4, 5];
        for i in 0..60 {
            assert_eq!(voxel_index(s, voxel_coords(s, i)), i);
        }
        assert_eq!(voxel_index(s, [1, 2, 3]), 33);
    }

    #[test]
    fn zscored_and_noiseless_plant_is_linear() {
        let e = model(30, 3, 0.0);
        let plant = Planting { region: Region::Box { min: [0, 0, 0], max: [2, 2, 2] }, model: 0 };
        let vol = make_volume([4, 4, 4], &[e.view()], &[plant], 0.0, 3).unwrap();
        for col in vol.responses().columns() {
            let m = col.mean().unwrap();
            let sd = col.std(0.0);
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
        // Least-squares fit with intercept reproduces a planted voxel exactly.
        let mut x = Array2::ones((30, 4));
        x.slice_mut(ndarray::s![.., 1..]).assign(&e);
        let y = vol.responses().column(0).to_owned();
        let xtx = x.t().dot(&x);
        let beta = crate::neuro::ridge::solve_spd(&xtx, &x.t().dot(&y));
        let resid = &y - &x.dot(&beta);
        assert!(resid.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn overlapping_models_rejected() {
        let a = model(10, 2, 0.0);
        let b = model(10, 2, 1.0);
        let p = |m, lo| Planting { region: Region::Box { min: [lo, 0, 0], max: [lo + 2, 2, 2] }, model: m };
        assert!(make_volume([4, 4, 4], &[a.view(), b.view()], &[p(0, 0), p(1, 1)], 0.1, 0).is_err());
        assert!(make_volume([4, 4, 4], &[a.view(), b.view()], &[p(0, 0), p(0, 1)], 0.1, 0).is_ok());
    }

    #[test]
    fn file_round_trip_keeps_metadata() {
        let a = model(10, 2, 0.0);
        let b = model(10, 2, 1.0);
        let plantings = vec![
            Planting { region: Region::Box { min: [0, 0, 0], max: [2, 2, 2] }, model: 0 },
            Planting { region: Region::Sphere { center: [3, 3, 3], radius: 1.0 }, model: 1 },
        ];
        let vol = make_volume([5, 5, 5], &[a.view(), b.view()], &plantings, 0.5, 11).unwrap();
        let mut buf = Vec::new();
        vol.write(&mut buf).unwrap();
        let back = SyntheticVolume::read(&buf[..]).unwrap();
        assert_eq!(back, vol);
        let owners = back.planted_model();
        assert_eq!(owners.iter().filter(|o| **o == Some(0)).count(), 8);
        assert_eq!(owners.iter().filter(|o| **o == Some(1)).count(), 7);
        buf.truncate(buf.len() - 3);
        assert!(matches!(SyntheticVolume::read(&buf[..]), Err(Error::Integrity(_))));
    }
}
