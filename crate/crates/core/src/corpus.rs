//! Stimulus corpus: rating matrices, caption sets and their on-disk formats.
//!
//! Ratings are CSV with a `stimulus_id` column followed by one column per
//! term label. Captions are JSONL, one `{ "stimulus_id", "captions" }` object
//! per line. Source ids may be arbitrary unique non-negative integers; after
//! ingestion stimuli are addressed by a dense [`StimulusId`] in ascending
//! source-id order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATEGORY_TERMS: usize = 34;
pub const DIMENSION_TERMS: usize = 14;
pub const CAPTIONS_PER_STIMULUS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusId(pub usize);

impl StimulusId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StimulusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingKind {
    /// Proportion of raters reporting each of 34 emotion categories.
    Category,
    /// Mean Likert ratings on 14 affective dimensions.
    Dimension,
}

impl RatingKind {
    pub fn width(self) -> usize {
        match self {
            RatingKind::Category => CATEGORY_TERMS,
            RatingKind::Dimension => DIMENSION_TERMS,
        }
    }
}

/// Per-stimulus human rating vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    kind: RatingKind,
    values: Array2<f64>,
    labels: Vec<String>,
    source_ids: Vec<u64>,
}

impl RatingMatrix {
    /// Builds a matrix whose rows are already in dense order; source ids
    /// default to `0..N`.
    pub fn new(kind: RatingKind, values: Array2<f64>, labels: Vec<String>) -> Result<Self> {
        let ids = (0..values.nrows() as u64).collect();
        Self::with_source_ids(kind, values, labels, ids)
    }

    pub fn with_source_ids(
        kind: RatingKind,
        values: Array2<f64>,
        labels: Vec<String>,
        source_ids: Vec<u64>,
    ) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::Schema(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        if values.ncols() != kind.width() {
            return Err(Error::Schema(format!(
                "{:?} ratings need {} columns, found {}",
                kind,
                kind.width(),
                values.ncols()
            )));
        }
        if source_ids.len() != values.nrows() {
            return Err(Error::Schema("source id count does not match row count".into()));
        }
        for (i, row) in values.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("stimulus {i} has a non-finite rating")));
            }
            if kind == RatingKind::Category {
                if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Schema(format!(
                        "stimulus {i}: category proportions must lie in [0, 1]"
                    )));
                }
                if row.iter().all(|&v| v == 0.0) {
                    return Err(Error::ZeroRow { stimulus: i });
                }
            }
        }
        Ok(Self { kind, values, labels, source_ids })
    }

    pub fn kind(&self) -> RatingKind {
        self.kind
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn source_ids(&self) -> &[u64] {
        &self.source_ids
    }

    pub fn n_stimuli(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, id: StimulusId) -> ArrayView1<'_, f64> {
        self.values.row(id.0)
    }

    /// Dense id for a source id, if present.
    pub fn dense_id(&self, source: u64) -> Option<StimulusId> {
        self.source_ids.binary_search(&source).ok().map(StimulusId)
    }

    /// Row-wise concatenation of two rating matrices over the same stimuli
    /// (the combined categorical + dimensional benchmark).
    pub fn concat(a: &RatingMatrix, b: &RatingMatrix) -> Result<Array2<f64>> {
        if a.source_ids != b.source_ids {
            return Err(Error::ShapeMismatch("rating matrices index different stimuli".into()));
        }
        Ok(concatenate(Axis(1), &[a.values.view(), b.values.view()]).expect("row counts match"))
    }

    /// Reads a ratings CSV and checks it against the declared kind.
    pub fn load(path: impl AsRef<Path>, kind: RatingKind) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(file, kind)
    }

    pub fn read<R: Read>(reader: R, kind: RatingKind) -> Result<Self> {
        let table = read_id_table(reader)?;
        if table.labels.len() != kind.width() {
            return Err(Error::Schema(format!(
                "{:?} ratings need {} term columns, header has {}",
                kind,
                kind.width(),
                table.labels.len()
            )));
        }
        for (line, row) in table.lines.iter().zip(table.values.outer_iter()) {
            if kind == RatingKind::Category && row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Ingest {
                    line: *line,
                    message: "category proportion outside [0, 1]".into(),
                });
            }
        }
        Self::with_source_ids(kind, table.values, table.labels, table.source_ids)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        write_id_table(writer, &self.labels, &self.source_ids, &self.values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }
}

/// Returns a copy of `m` with every row scaled to unit L2 norm.
pub fn normalize_rows(m: &RatingMatrix) -> Result<RatingMatrix> {
    let mut values = m.values.clone();
    for (i, mut row) in values.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroRow { stimulus: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(RatingMatrix {
        kind: m.kind,
        values,
        labels: m.labels.clone(),
        source_ids: m.source_ids.clone(),
    })
}

/// Twenty free-text descriptions per stimulus, keyed by dense id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptionSet {
    captions: BTreeMap<StimulusId, Vec<String>>,
}

#[derive(Deserialize)]
struct CaptionLine {
    stimulus_id: u64,
    captions: Vec<String>,
}

impl CaptionSet {
    pub fn new(captions: BTreeMap<StimulusId, Vec<String>>) -> Result<Self> {
        for (id, caps) in &captions {
            if caps.len() != CAPTIONS_PER_STIMULUS {
                return Err(Error::Schema(format!(
                    "stimulus {id} has {} captions, expected {CAPTIONS_PER_STIMULUS}",
                    caps.len()
                )));
            }
        }
        Ok(Self { captions })
    }

    pub fn get(&self, id: StimulusId) -> Option<&[String]> {
        self.captions.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    /// Reads captions JSONL, mapping source ids through `index`.
    pub fn read<R: Read>(reader: R, index: &impl Fn(u64) -> Option<StimulusId>) -> Result<Self> {
        let mut captions = BTreeMap::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = n as u64 + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CaptionLine = serde_json::from_str(&line).map_err(|e| Error::Ingest {
                line: line_no,
                message: e.to_string(),
            })?;
            let id = index(parsed.stimulus_id).ok_or_else(|| Error::Ingest {
                line: line_no,
                message: format!("unknown stimulus_id {}", parsed.stimulus_id),
            })?;
            if parsed.captions.len() != CAPTIONS_PER_STIMULUS {
                return Err(Error::Ingest {
                    line: line_no,
                    message: format!(
                        "{} captions, expected {CAPTIONS_PER_STIMULUS}",
                        parsed.captions.len()
                    ),
                });
            }
            if captions.insert(id, parsed.captions).is_some() {
                return Err(Error::Ingest {
                    line: line_no,
                    message: format!("duplicate stimulus_id {}", parsed.stimulus_id),
                });
            }
        }
        Ok(Self { captions })
    }
}

/// Ratings plus optional captions for the same stimuli.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub ratings: RatingMatrix,
    pub captions: Option<CaptionSet>,
}

pub fn load_corpus(
    ratings_path: impl AsRef<Path>,
    kind: RatingKind,
    captions_path: Option<&Path>,
) -> Result<Corpus> {
    let ratings = RatingMatrix::load(ratings_path, kind)?;
    let captions = match captions_path {
        Some(p) => {
            let file = std::fs::File::open(p)?;
            Some(CaptionSet::read(file, &|id| ratings.dense_id(id))?)
        }
        None => None,
    };
    Ok(Corpus { ratings, captions })
}

/// A numeric CSV keyed by `stimulus_id`, rows sorted by source id.
pub(crate) struct IdTable {
    pub labels: Vec<String>,
    pub source_ids: Vec<u64>,
    pub values: Array2<f64>,
    pub lines: Vec<u64>,
}

pub(crate) fn read_id_table<R: Read>(reader: R) -> Result<IdTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::Ingest { line: 1, message: "empty file".into() });
        }
        Some(h) => h.map_err(|e| csv_error(e, 1))?,
    };
    if header.get(0).map(str::trim) != Some("stimulus_id") {
        return Err(Error::Ingest {
            line: 1,
            message: "first header column must be `stimulus_id`".into(),
        });
    }
    let labels: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if labels.is_empty() {
        return Err(Error::Ingest { line: 1, message: "no value columns".into() });
    }
    let width = labels.len();
    let mut rows: Vec<(u64, u64, Vec<f64>)> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0).map(str::trim) == Some("") {
            continue;
        }
        if rec.len() != width + 1 {
            return Err(Error::Ingest {
                line,
                message: format!("expected {} fields, found {}", width + 1, rec.len()),
            });
        }
        let id: u64 = rec[0].trim().parse().map_err(|_| Error::Ingest {
            line,
            message: format!("invalid stimulus_id `{}`", &rec[0]),
        })?;
        let mut vals = Vec::with_capacity(width);
        for (col, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Ingest {
                line,
                message: format!("non-numeric value `{field}` in column `{}`", labels[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest { line, message: format!("non-finite value `{field}`") });
            }
            vals.push(v);
        }
        rows.push((id, line, vals));
    }
    if rows.is_empty() {
        return Err(Error::Ingest { line: 2, message: "no data rows".into() });
    }
    let mut seen: HashMap<u64, u64> = HashMap::new();
    for (id, line, _) in &rows {
        if let Some(first) = seen.insert(*id, *line) {
            return Err(Error::Ingest {
                line: *line,
                message: format!("duplicate stimulus_id {id} (first seen at line {first})"),
            });
        }
    }
    rows.sort_by_key(|r| r.0);
    let n = rows.len();
    let mut values = Array2::zeros((n, width));
    let mut source_ids = Vec::with_capacity(n);
    let mut lines = Vec::with_capacity(n);
    for (i, (id, line, vals)) in rows.into_iter().enumerate() {
        source_ids.push(id);
        lines.push(line);
        for (j, v) in vals.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok(IdTable { labels, source_ids, values, lines })
}

pub(crate) fn write_id_table<W: Write>(
    writer: W,
    labels: &[String],
    source_ids: &[u64],
    values: &Array2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["stimulus_id".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(e, 0))?;
    for (id, row) in source_ids.iter().zip(values.outer_iter()) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(e, 0))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Ingest { line, message: e.to_string() }
}
