//! Rank-based explanation quality metrics, plus the conventional score-based
//! counterparts they are validated against.
//!
//! | criterion    | rank-based                | conventional                  |
//! |--------------|---------------------------|-------------------------------|
//! | explicitness | [`nrc`] (cost)            | [`traditional_complexity`]    |
//! | fidelity     | [`rank_faithfulness`]     | [`traditional_faithfulness`]  |
//! | stability    | [`rank_stability`]        | [`traditional_sensitivity`]   |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{minmax_normalize, Explanation, Ranking};
use crate::model::Predictor;
use crate::stats::{pearson, spearman};

/// One explanation's scores on the three rank-based criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    /// Lower is better.
    pub nrc: f64,
    pub stability: f64,
    pub faithfulness: f64,
}

impl MetricVector {
    pub fn as_row(&self) -> [f64; 3] {
        [self.nrc, self.stability, self.faithfulness]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NrcConfig {
    /// Weight of the rank-dispersion penalty.
    pub alpha: f64,
}

impl Default for NrcConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl NrcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config(format!("NRC alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Normalized rank-based complexity with rank-dispersion penalty:
/// `(Σ 1/R_i) · ln(d + 1) · (1 + α · std(R))`, population std.
pub fn nrc(r: &Ranking, cfg: &NrcConfig) -> f64 {
    // Summing in sorted order makes the result exactly permutation invariant.
    let mut ranks = r.ranks().to_vec();
    ranks.sort_unstable();
    let d = ranks.len() as f64;
    let inv_sum: f64 = ranks.iter().map(|&k| 1.0 / k as f64).sum();
    let mean = ranks.iter().map(|&k| k as f64).sum::<f64>() / d;
    let var = ranks.iter().map(|&k| (k as f64 - mean).powi(2)).sum::<f64>() / d;
    inv_sum * (d + 1.0).ln() * (1.0 + cfg.alpha * var.sqrt())
}

/// Absolute prediction change from replacing each feature of `x`, one at a
/// time, with the corresponding `baseline` value.
pub fn single_feature_deltas(
    predict: &dyn Predictor,
    x: &[f64],
    baseline: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != baseline.len() {
        return Err(Error::invalid(format!(
            "instance has {} features but baseline has {}",
            x.len(),
            baseline.len()
        )));
    }
    let mut rows = Vec::with_capacity(x.len() + 1);
    rows.push(x.to_vec());
    for i in 0..x.len() {
        let mut row = x.to_vec();
        row[i] = baseline[i];
        rows.push(row);
    }
    let preds = predict.predict_proba(&rows)?;
    if preds.len() != rows.len() {
        return Err(Error::Predictor(format!(
            "expected {} predictions, got {}",
            rows.len(),
            preds.len()
        )));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::Predictor("non-finite prediction".into()));
    }
    Ok(preds[1..].iter().map(|p| (preds[0] - p).abs()).collect())
}

fn correlate_with_deltas(importance: &[f64], deltas: &[f64]) -> Result<f64> {
    if importance.len() < 2 {
        // A single feature has nothing to correlate against.
        return Ok(0.0);
    }
    pearson(importance, deltas)
}

/// Pearson correlation between `1 / rank_i` and the single-feature
/// baseline-replacement prediction change.
pub fn rank_faithfulness(
    predict: &dyn Predictor,
    ranking: &Ranking,
    x: &[f64],
    baseline: &[f64],
) -> Result<f64> {
    if x.len() != ranking.len() {
        return Err(Error::invalid("instance width does not match ranking"));
    }
    let deltas = single_feature_deltas(predict, x, baseline)?;
    let inv: Vec<f64> = ranking.ranks().iter().map(|&k| 1.0 / k as f64).collect();
    correlate_with_deltas(&inv, &deltas)
}

/// Spearman correlation between two explanations' importance magnitudes.
pub fn rank_stability(e1: &Explanation, e2: &Explanation) -> Result<f64> {
    e1.schema().ensure_same(e2.schema())?;
    if e1.len() < 2 {
        return Ok(0.0);
    }
    spearman(&e1.magnitudes(), &e2.magnitudes())
}

/// Entropy of the fractional contributions `|s_i| / Σ|s_j|`.
pub fn traditional_complexity(expl: &Explanation) -> Result<f64> {
    let mags = expl.magnitudes();
    let total: f64 = mags.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("complexity undefined for an all-zero explanation"));
    }
    Ok(mags
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.ln()
        })
        .sum())
}

/// Pearson correlation between `|score_i|` and the single-feature
/// baseline-replacement prediction change.
pub fn traditional_faithfulness(
    predict: &dyn Predictor,
    expl: &Explanation,
    x: &[f64],
    baseline: &[f64],
) -> Result<f64> {
    if x.len() != expl.len() {
        return Err(Error::invalid("instance width does not match explanation"));
    }
    let deltas = single_feature_deltas(predict, x, baseline)?;
    correlate_with_deltas(&expl.magnitudes(), &deltas)
}

/// Euclidean distance between min-max normalized importance magnitudes.
/// Lower means more stable.
pub fn traditional_sensitivity(e1: &Explanation, e2: &Explanation) -> Result<f64> {
    e1.schema().ensure_same(e2.schema())?;
    let a = minmax_normalize(&e1.magnitudes())?;
    let b = minmax_normalize(&e2.magnitudes())?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}
