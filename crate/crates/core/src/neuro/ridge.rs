//! Ridge regression with nested cross-validated regularization.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::volume::{Shape, SyntheticVolume};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::stats::pearson;

/// Voxels handled per parallel work unit.
const VOXEL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RidgeForm {
    /// Primal when features <= samples, dual otherwise.
    #[default]
    Auto,
    Primal,
    Dual,
}

/// Solve `a x = b` for symmetric positive definite `a`.
#[cfg(test)]
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let chol = nalgebra::Cholesky::new(crate::linalg::to_nalgebra(a.view())).expect("matrix is not positive definite");
    let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().copied());
    Array1::from_iter(chol.solve(&rhs).iter().copied())
}

fn column_means(a: ArrayView2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}

/// Ridge predictions for one train/test split at any penalty.
///
/// Both forms reduce to `pred(λ) = A · diag(1 / (s + λ)) · Q + ȳ`, where
/// `s` are eigenvalues of `XᵀX` (primal) or `XXᵀ` (dual) of the centered
/// training design. Features and targets are centered on the training set,
/// which fits an unpenalized intercept.
pub struct RidgeSolver {
    s: Array1<f64>,
    a: Array2<f64>,
    q: Array2<f64>,
    y_mean: Array1<f64>,
}

impl RidgeSolver {
    pub fn new(x_train: ArrayView2<f64>, y_train: ArrayView2<f64>, x_test: ArrayView2<f64>, form: RidgeForm) -> Self {
        let x_mean = column_means(x_train);
        let y_mean = column_means(y_train);
        let xc = &x_train - &x_mean;
        let yc = &y_train - &y_mean;
        let xt = &x_test - &x_mean;
        let primal = match form {
            RidgeForm::Auto => x_train.ncols() <= x_train.nrows(),
            RidgeForm::Primal => true,
            RidgeForm::Dual => false,
        };
        let (s, a, q) = if primal {
            let (s, v) = symmetric_eigen(xc.t().dot(&xc).view());
            (s, xt.dot(&v), v.t().dot(&xc.t().dot(&yc)))
        } else {
            let (s, u) = symmetric_eigen(xc.dot(&xc.t()).view());
            (s, xt.dot(&xc.t()).dot(&u), u.t().dot(&yc))
        };
        // Directions with (numerically) zero eigenvalue carry no signal in
        // exact arithmetic; dropping them keeps tiny penalties stable.
        let mut a = a;
        let cut = s.iter().copied().fold(0.0, f64::max) * 1e-12;
        for (mut col, &v) in a.columns_mut().into_iter().zip(&s) {
            if v <= cut {
                col.fill(0.0);
            }
        }
        Self { s: s.mapv(|v| v.max(0.0)), a, q, y_mean }
    }

    /// Predictions for the test rows, restricted to target columns `cols`.
    pub fn predict(&self, lambda: f64, cols: Range<usize>) -> Array2<f64> {
        let mut a = self.a.clone();
        for (mut c, &s) in a.columns_mut().into_iter().zip(&self.s) {
            c /= s + lambda;
        }
        let mut p = a.dot(&self.q.slice(ndarray::s![.., cols.clone()]));
        p += &self.y_mean.slice(ndarray::s![cols]);
        p
    }

    pub fn predict_all(&self, lambda: f64) -> Array2<f64> {
        self.predict(lambda, 0..self.q.ncols())
    }
}

/// `n` penalties log-spaced over `[lo, hi]`, ascending.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Contiguous folds whose sizes differ by at most one.
pub fn kfold(n: usize, k: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Ascending candidate penalties.
    pub grid: Vec<f64>,
    pub form: RidgeForm,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self { outer_folds: 5, inner_folds: 6, grid: log_grid(100, 1e-3, 1e3), form: RidgeForm::Auto }
    }
}

impl EncodeConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::InvalidArgument("fold counts must be at least 2".into()));
        }
        if n < self.outer_folds * self.inner_folds {
            return Err(Error::InvalidArgument(format!(
                "{n} stimuli cannot fill {} × {} folds",
                self.outer_folds, self.inner_folds
            )));
        }
        if self.grid.is_empty() || self.grid.iter().any(|l| !(*l > 0.0)) || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("penalty grid must be positive and strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EncodingResult {
    pub shape: Shape,
    pub grid: Vec<f64>,
    pub folds: Vec<Range<usize>>,
    /// Outer fold × voxel index into `grid` chosen by the inner loop.
    pub lambda_index: Array2<usize>,
    /// Outer fold × voxel test correlation; NaN where undefined.
    pub fold_r: Array2<f64>,
    /// Mean test correlation over outer folds; `None` for constant voxels.
    pub r: Vec<Option<f64>>,
}

impl EncodingResult {
    pub fn lambda(&self, fold: usize, voxel: usize) -> f64 {
        self.grid[self.lambda_index[[fold, voxel]]]
    }

    /// Voxels with no defined correlation.
    pub fn undefined_voxels(&self) -> Vec<usize> {
        self.r.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect()
    }
}

fn complement(n: usize, r: &Range<usize>) -> Vec<usize> {
    (0..r.start).chain(r.end..n).collect()
}

/// Per voxel, the grid index with the smallest summed squared validation
/// error over the inner folds; ties go to the smaller penalty.
pub fn select_lambda(x: ArrayView2<f64>, y: ArrayView2<f64>, inner_folds: usize, grid: &[f64], form: RidgeForm) -> Vec<usize> {
    let n = x.nrows();
    let solvers: Vec<(RidgeSolver, Vec<usize>)> = kfold(n, inner_folds)
        .iter()
        .map(|val| {
            let tr = complement(n, val);
            let s = RidgeSolver::new(
                x.select(Axis(0), &tr).view(),
                y.select(Axis(0), &tr).view(),
                x.slice(ndarray::s![val.clone(), ..]),
                form,
            );
            (s, val.clone().collect())
        })
        .collect();
    let v = y.ncols();
    let chunks: Vec<Range<usize>> = (0..v).step_by(VOXEL_CHUNK).map(|s| s..(s + VOXEL_CHUNK).min(v)).collect();
    chunks
        .par_iter()
        .flat_map_iter(|cols| {
            let mut err = Array2::<f64>::zeros((grid.len(), cols.len()));
            for (solver, val) in &solvers {
                let actual = y.select(Axis(0), val);
                let actual = actual.slice(ndarray::s![.., cols.clone()]);
                for (g, &lambda) in grid.iter().enumerate() {
                    let pred = solver.predict(lambda, cols.clone());
                    let mut row = err.row_mut(g);
                    for (e, (p, a)) in row.iter_mut().zip(pred.columns().into_iter().zip(actual.columns())) {
                        *e += p.iter().zip(a.iter()).map(|(p, a)| (p - a) * (p - a)).sum::<f64>();
                    }
                }
            }
            (0..cols.len())
                .map(|c| {
                    let col = err.column(c);
                    let mut best = 0;
                    for g in 1..grid.len() {
                        if col[g] < col[best] {
                            best = g;
                        }
                    }
                    best
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Nested cross-validated ridge encoding of every target column of `y`
/// (stimuli × voxels) from features `x` (stimuli × features).
pub fn encode_matrix(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &EncodeConfig) -> Result<EncodingResult> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::ShapeMismatch(format!("{n} feature rows vs {} response rows", y.nrows())));
    }
    cfg.validate(n)?;
    let v = y.ncols();
    let folds = kfold(n, cfg.outer_folds);
    let mut lambda_index = Array2::<usize>::zeros((folds.len(), v));
    let mut fold_r = Array2::<f64>::from_elem((folds.len(), v), f64::NAN);
    for (f, test) in folds.iter().enumerate() {
        let tr = complement(n, test);
        let xtr = x.select(Axis(0), &tr);
        let ytr = y.select(Axis(0), &tr);
        let xte = x.slice(ndarray::s![test.clone(), ..]);
        let yte = y.slice(ndarray::s![test.clone(), ..]);
        let chosen = select_lambda(xtr.view(), ytr.view(), cfg.inner_folds, &cfg.grid, cfg.form);
        let solver = RidgeSolver::new(xtr.view(), ytr.view(), xte, cfg.form);
        let rs: Vec<f64> = (0..v)
            .into_par_iter()
            .map(|j| {
                let pred = solver.predict(cfg.grid[chosen[j]], j..j + 1);
                let p: Vec<f64> = pred.iter().copied().collect();
                let a: Vec<f64> = yte.column(j).to_vec();
                pearson(&p, &a).unwrap_or(f64::NAN)
            })
            .collect();
        lambda_index.row_mut(f).assign(&Array1::from(chosen));
        fold_r.row_mut(f).assign(&Array1::from(rs));
    }
    let r = fold_r
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let constant = y.column(j).iter().all(|&a| a == y[[0, j]]);
            let defined: Vec<f64> = col.iter().copied().filter(|r| r.is_finite()).collect();
            if constant || defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            }
        })
        .collect();
    Ok(EncodingResult { shape: [1, 1, v], grid: cfg.grid.clone(), folds, lambda_index, fold_r, r })
}

pub fn encode(vol: &SyntheticVolume, features: ArrayView2<f64>, cfg: &EncodeConfig) -> Result<EncodingResult> {
    let mut out = encode_matrix(features, vol.responses().view(), cfg)?;
    out.shape = vol.shape();
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReliabilityRanking {
    /// Leave-one-stimulus-out pattern correlation per stimulus.
    pub accuracy: Vec<Option<f64>>,
    /// Stimuli by descending accuracy; undefined last, ties by index.
    pub order: Vec<usize>,
    /// The top `n` stimuli, ascending by index.
    pub selected: Vec<usize>,
}

/// Rank stimuli by how well a ridge model fit on all other stimuli predicts
/// their response pattern across voxels.
pub fn reliability_rank(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64, top_n: usize) -> Result<ReliabilityRanking> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::ShapeMismatch(format!("{n} feature rows vs {} response rows", y.nrows())));
    }
    if top_n > n {
        return Err(Error::InvalidArgument(format!("cannot select {top_n} of {n} stimuli")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let accuracy: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tr = complement(n, &(i..i + 1));
            let solver = RidgeSolver::new(
                x.select(Axis(0), &tr).view(),
                y.select(Axis(0), &tr).view(),
                x.slice(ndarray::s![i..i + 1, ..]),
                RidgeForm::Auto,
            );
            let p: Vec<f64> = solver.predict_all(lambda).iter().copied().collect();
            pearson(&p, &y.row(i).to_vec())
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| accuracy[i].unwrap_or(f64::NEG_INFINITY);
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut selected = order[..top_n].to_vec();
    selected.sort_unstable();
    Ok(ReliabilityRanking { accuracy, order, selected })
}
