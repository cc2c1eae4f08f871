//! Representational geometry: similarity matrices and their comparison,
//! categorical structure and post-hoc component labels.

mod centroid;
mod choice;
mod labels;

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::StimulusId;
use crate::error::{Error, Result};
use crate::stats::{pearson, spearman};

pub use centroid::{analytic_chance, dominant_category, nearest_centroid, CentroidConfig, CentroidReport};
pub use choice::{
    choice_rsm, corrected_consistency, reliability_corrected, split_halves, ChoiceRsm,
    ConsistencyReport,
};
pub use labels::{classify_components, label_components, ComponentLabel, InterpretabilityClass, InterpretabilityTag, LabelTerm, TermSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsmKind {
    ChoiceProbability,
    VectorSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

/// Symmetric stimulus-by-stimulus similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsm {
    values: Array2<f64>,
    kind: RsmKind,
    ids: Vec<StimulusId>,
}

impl Rsm {
    pub fn new(values: Array2<f64>, kind: RsmKind, ids: Vec<StimulusId>) -> Result<Self> {
        let m = values.nrows();
        if values.ncols() != m || ids.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "RSM is {}x{} with {} ids",
                values.nrows(),
                values.ncols(),
                ids.len()
            )));
        }
        for i in 0..m {
            for j in 0..i {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("RSM not symmetric at ({i}, {j})")));
                }
            }
        }
        if kind == RsmKind::ChoiceProbability && values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("choice probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { values, kind, ids })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> RsmKind {
        self.kind
    }

    pub fn ids(&self) -> &[StimulusId] {
        &self.ids
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    /// Entries strictly above the diagonal, row-major.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let m = self.size();
        let mut out = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                out.push(self.values[[i, j]]);
            }
        }
        out
    }

    /// Restricts (and reorders) the matrix to `subset`.
    pub fn select(&self, subset: &[StimulusId]) -> Result<Rsm> {
        let pos: Vec<usize> = subset
            .iter()
            .map(|s| {
                self.ids
                    .iter()
                    .position(|x| x == s)
                    .ok_or_else(|| Error::InvalidArgument(format!("stimulus {s} not in RSM")))
            })
            .collect::<Result<_>>()?;
        let values = Array2::from_shape_fn((pos.len(), pos.len()), |(i, j)| self.values[[pos[i], pos[j]]]);
        Ok(Rsm { values, kind: self.kind, ids: subset.to_vec() })
    }

    /// CSV with a `stimulus_id` header row and column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["stimulus_id".to_string()];
        header.extend(self.ids.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (id, row) in self.ids.iter().zip(self.values.outer_iter()) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, kind: RsmKind) -> Result<Rsm> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec.map_err(csv_err)?);
        }
        let header = rows.first().ok_or_else(|| Error::Ingest { line: 1, message: "empty RSM file".into() })?;
        let parse_id = |s: &str, line: u64| -> Result<StimulusId> {
            s.trim().parse().map(StimulusId).map_err(|_| Error::Ingest { line, message: format!("bad stimulus id `{s}`") })
        };
        let ids: Vec<StimulusId> = header.iter().skip(1).map(|s| parse_id(s, 1)).collect::<Result<_>>()?;
        let m = ids.len();
        if rows.len() != m + 1 {
            return Err(Error::Schema(format!("RSM header lists {m} stimuli but has {} rows", rows.len() - 1)));
        }
        let mut values = Array2::zeros((m, m));
        for (i, rec) in rows[1..].iter().enumerate() {
            let line = i as u64 + 2;
            if parse_id(&rec[0], line)? != ids[i] {
                return Err(Error::Ingest { line, message: "row id does not match header order".into() });
            }
            for j in 0..m {
                values[[i, j]] = rec[j + 1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Ingest { line, message: format!("non-numeric `{}`", &rec[j + 1]) })?;
            }
        }
        Rsm::new(values, kind, ids)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Ingest { line: e.position().map_or(0, |p| p.line()), message: e.to_string() }
}

/// Pairwise cosine similarity between rows.
pub fn vector_rsm(rows: ArrayView2<f64>, ids: Vec<StimulusId>) -> Result<Rsm> {
    let m = rows.nrows();
    let mut unit = rows.to_owned();
    for (i, mut r) in unit.outer_iter_mut().enumerate() {
        let n = r.dot(&r).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroRow { stimulus: ids.get(i).map_or(i, |s| s.0) });
        }
        r.mapv_inplace(|v| v / n);
    }
    let mut values = unit.dot(&unit.t());
    for i in 0..m {
        values[[i, i]] = 1.0;
        for j in 0..i {
            let v = values[[j, i]];
            values[[i, j]] = v;
        }
    }
    Rsm::new(values, RsmKind::VectorSimilarity, ids)
}

/// Correlation of two RSMs over the upper triangle, diagonal excluded.
pub fn rsm_correlation(x: &Rsm, y: &Rsm, method: CorrelationMethod) -> Result<f64> {
    if x.ids != y.ids {
        return Err(Error::ShapeMismatch("RSMs index different stimuli".into()));
    }
    let (a, b) = (x.upper_triangle(), y.upper_triangle());
    let r = match method {
        CorrelationMethod::Pearson => pearson(&a, &b),
        CorrelationMethod::Spearman => spearman(&a, &b),
    };
    r.ok_or_else(|| Error::Undefined("RSM upper triangle has zero variance".into()))
}
