//! Naming learned components by their correlation with rating terms.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{RatingKind, RatingMatrix};
use crate::error::{Error, Result};
use crate::stats::pearson;

/// Minimum |r| gap that cuts off the following term.
const CUTOFF_GAP: f64 = 0.1;
/// Components whose best |r| does not exceed this are uninterpretable.
const INTERPRETABLE_R: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSource {
    Category,
    Dimension,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelTerm {
    pub name: String,
    pub source: TermSource,
    pub r: f64,
}

impl LabelTerm {
    /// Term name with a `-high`/`-low` suffix for the correlation sign.
    pub fn label(&self) -> String {
        format!("{}-{}", self.name, if self.r >= 0.0 { "high" } else { "low" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentLabel {
    pub component: usize,
    /// Retained terms, by |r| descending.
    pub terms: Vec<LabelTerm>,
    /// Largest |r| over all terms; `None` for a constant component.
    pub max_abs_r: Option<f64>,
}

impl ComponentLabel {
    pub fn is_constant(&self) -> bool {
        self.max_abs_r.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpretabilityClass {
    Categorical,
    Dimensional,
    Mixed,
    Uninterpretable,
}

impl std::fmt::Display for InterpretabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Categorical => "categorical",
            Self::Dimensional => "dimensional",
            Self::Mixed => "mixed",
            Self::Uninterpretable => "uninterpretable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InterpretabilityTag {
    pub component: usize,
    pub class: InterpretabilityClass,
}

/// Apply the gap rule to terms sorted by |r| descending.
fn retain(sorted: &[LabelTerm]) -> usize {
    let mut kept = 1.min(sorted.len());
    while kept < sorted.len().min(3) {
        if sorted[kept - 1].r.abs() - sorted[kept].r.abs() >= CUTOFF_GAP {
            break;
        }
        kept += 1;
    }
    kept
}

/// Label each column of `e` with up to three category or dimension terms.
///
/// Rating columns with zero variance are skipped. A constant component gets
/// no terms and is logged.
pub fn label_components(
    e: ArrayView2<f64>,
    cats: &RatingMatrix,
    dims: &RatingMatrix,
) -> Result<Vec<ComponentLabel>> {
    if cats.kind() != RatingKind::Category || dims.kind() != RatingKind::Dimension {
        return Err(Error::InvalidArgument("expected category then dimension ratings".into()));
    }
    if cats.n_stimuli() != e.nrows() || dims.n_stimuli() != e.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {} stimuli, ratings have {} and {}",
            e.nrows(),
            cats.n_stimuli(),
            dims.n_stimuli()
        )));
    }
    let terms: Vec<(String, TermSource, Vec<f64>)> = cats
        .labels()
        .iter()
        .zip(cats.values().columns())
        .map(|(l, c)| (l.clone(), TermSource::Category, c.to_vec()))
        .chain(
            dims.labels()
                .iter()
                .zip(dims.values().columns())
                .map(|(l, c)| (l.clone(), TermSource::Dimension, c.to_vec())),
        )
        .collect();
    let columns: Vec<Vec<f64>> = e.columns().into_iter().map(|c| c.to_vec()).collect();
    Ok(columns
        .par_iter()
        .enumerate()
        .map(|(component, col)| {
            let mut scored: Vec<LabelTerm> = terms
                .iter()
                .filter_map(|(name, source, values)| {
                    pearson(col, values).map(|r| LabelTerm { name: name.clone(), source: *source, r })
                })
                .collect();
            if scored.is_empty() {
                log::warn!("component {component} is constant and gets no label");
                return ComponentLabel { component, terms: Vec::new(), max_abs_r: None };
            }
            // Stable sort keeps the term order for equal |r|.
            scored.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()));
            let max_abs_r = Some(scored[0].r.abs());
            scored.truncate(retain(&scored));
            ComponentLabel { component, terms: scored, max_abs_r }
        })
        .collect())
}

pub fn classify_components(labels: &[ComponentLabel]) -> Vec<InterpretabilityTag> {
    labels
        .iter()
        .map(|l| {
            let class = match l.max_abs_r {
                Some(m) if m > INTERPRETABLE_R => {
                    let cat = l.terms.iter().any(|t| t.source == TermSource::Category);
                    let dim = l.terms.iter().any(|t| t.source == TermSource::Dimension);
                    match (cat, dim) {
                        (true, true) => InterpretabilityClass::Mixed,
                        (true, false) => InterpretabilityClass::Categorical,
                        _ => InterpretabilityClass::Dimensional,
                    }
                }
                _ => InterpretabilityClass::Uninterpretable,
            };
            InterpretabilityTag { component: l.component, class }
        })
        .collect()
}
