use super::{Judgment, Position};
use crate::error::{Error, Result};

/// How often each presentation slot was chosen as the odd one out.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionBias {
    pub counts: [u64; 3],
    pub frequencies: [f64; 3],
    /// Pearson chi-square against a uniform choice over slots.
    pub chi_square: f64,
    /// Upper-tail probability of `chi_square` with two degrees of freedom.
    pub p_value: f64,
}

pub fn position_bias(judgments: &[Judgment]) -> Result<PositionBias> {
    if judgments.is_empty() {
        return Err(Error::InvalidArgument("no judgments to audit".into()));
    }
    let mut counts = [0u64; 3];
    for j in judgments {
        counts[j.position.slot()] += 1;
    }
    let n = judgments.len() as f64;
    let expected = n / 3.0;
    let frequencies = counts.map(|c| c as f64 / n);
    let chi_square = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum::<f64>();
    // chi-square survival function for df = 2 is exp(-x/2)
    let p_value = (-chi_square / 2.0).exp();
    Ok(PositionBias { counts, frequencies, chi_square, p_value })
}

impl PositionBias {
    pub fn frequency(&self, p: Position) -> f64 {
        self.frequencies[p.slot()]
    }
}
